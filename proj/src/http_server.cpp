#include <sys/socket.h>

#include <httplib.h>

#include <cctype>

#include "counselflow/service.hpp"

namespace counselflow {

struct HttpFrontend::Impl {
    SessionService& service;
    httplib::Server server;

    explicit Impl(SessionService& s) : service(s) {
        auto handler = [this](const httplib::Request& in, httplib::Response& out) {
            HttpRequest req;
            req.method = in.method;
            req.path = in.path;
            req.body = in.body;
            for (const auto& [k, v] : in.params) req.query.emplace(k, v);
            for (const auto& [k, v] : in.headers) {
                std::string lower = k;
                for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                req.headers.emplace(std::move(lower), v);
            }
            HttpResponse res = service.handle(req);
            out.status = res.status;
            for (const auto& [k, v] : res.headers) out.set_header(k, v);
            if (res.status != 304) out.set_content(res.body, res.content_type);
        };
        server.Get(".*", handler);
        server.Post(".*", handler);
        server.Put(".*", handler);
        server.Delete(".*", handler);
        server.Patch(".*", handler);
    }
};

HttpFrontend::HttpFrontend(SessionService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpFrontend::~HttpFrontend() { stop(); }

bool HttpFrontend::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

bool HttpFrontend::listen_unix(const std::filesystem::path& socket_path) {
    std::filesystem::remove(socket_path);
    impl_->server.set_address_family(AF_UNIX);
    return impl_->server.listen(socket_path.string(), 80);
}

void HttpFrontend::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

void HttpFrontend::wait_until_ready() { impl_->server.wait_until_ready(); }

}  // namespace counselflow
