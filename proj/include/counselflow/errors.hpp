#pragma once

#include <stdexcept>
#include <string>

namespace counselflow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller violated an operation's documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// A document or record failed schema or invariant validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

class GatewayError : public Error {
public:
    using Error::Error;
};

class TransportError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class BackendRejected : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class MalformedOutputError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class ScriptExhausted : public GatewayError {
public:
    using GatewayError::GatewayError;
};

// The client side of a dialogue went away.
class ClientClosed : public Error {
public:
    using Error::Error;
};

}  // namespace counselflow
