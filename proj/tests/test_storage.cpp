#include "counselflow/storage.hpp"

#include "support.hpp"

using namespace cft;

TEST_CASE("append_line writes newline-terminated lines") {
    TempDir dir("append");
    AppendFile f(dir / "sub/log.jsonl");
    f.append_line("one");
    f.append_line("two");
    CHECK(slurp(dir / "sub/log.jsonl") == "one\ntwo\n");
    auto r = read_lines(dir / "sub/log.jsonl");
    CHECK(r.lines == std::vector<std::string>{"one", "two"});
    CHECK_FALSE(r.torn_tail);
}

TEST_CASE("read_lines reports an unterminated fragment as torn") {
    TempDir dir("torn");
    write_text(dir / "x", "a\nb\npartial");
    auto r = read_lines(dir / "x");
    CHECK(r.lines == std::vector<std::string>{"a", "b"});
    CHECK(r.torn_tail);
    CHECK(read_lines(dir / "missing").lines.empty());
}

TEST_CASE("fault injector crashes on the chosen write, optionally torn") {
    TempDir dir("faults");
    SUBCASE("clean crash leaves nothing of the write") {
        FaultInjector fi(1, false);
        AppendFile f(dir / "log", &fi);
        f.append_line("first");
        bool crashed = false;
        try {
            f.append_line("second");
        } catch (const SimulatedCrash&) {
            crashed = true;
        }
        CHECK(crashed);
        CHECK(fi.fired());
        CHECK(slurp(dir / "log") == "first\n");
        f.append_line("third");  // later writes are not crashed again
        CHECK(slurp(dir / "log") == "first\nthird\n");
    }
    SUBCASE("torn crash leaves half a line") {
        FaultInjector fi(0, true);
        AppendFile f(dir / "log", &fi);
        CHECK_THROWS_AS(f.append_line("0123456789"), SimulatedCrash);
        CHECK(slurp(dir / "log") == "01234");
        CHECK(read_lines(dir / "log").torn_tail);
    }
}

TEST_CASE("write_file_atomic keeps the old content when the write crashes") {
    TempDir dir("atomic");
    write_file_atomic(dir / "a.json", "old");
    FaultInjector fi(0, true);
    CHECK_THROWS_AS(write_file_atomic(dir / "a.json", "new content", &fi), SimulatedCrash);
    CHECK(slurp(dir / "a.json") == "old");
    write_file_atomic(dir / "a.json", "new");
    CHECK(slurp(dir / "a.json") == "new");
}

TEST_CASE("rewrite_lines replaces the file") {
    TempDir dir("rewrite");
    write_text(dir / "l", "a\nb\nc\n");
    rewrite_lines(dir / "l", {"x"});
    CHECK(slurp(dir / "l") == "x\n");
}
