#pragma once

#include <stdexcept>
#include <string>

namespace cmie {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad config file, CLI usage, or an invalid mode/toggle combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed dataset records, unreadable stores, schema violations.
class DataError : public Error {
public:
    using Error::Error;
};

// Network-level failure that persisted through the retry policy.
class TransportError : public Error {
public:
    using Error::Error;
};

// Credentials rejected by the remote service. Never retried.
class AuthError : public TransportError {
public:
    using TransportError::TransportError;
};

// Quota/rate-limit exhaustion, surfaced distinctly so batch runs can pause.
class QuotaError : public TransportError {
public:
    using TransportError::TransportError;
};

// Provider declined to answer; counted as an abstention, never coerced.
class RefusalError : public Error {
public:
    using Error::Error;
};

// Replay provider has no transcript for the request hash.
class ReplayMissError : public Error {
public:
    using Error::Error;
};

// Two distinct requests produced the same digest. Indicates a digest bug.
class HashCollisionError : public Error {
public:
    using Error::Error;
};

// Model output could not be parsed into the demanded JSON shape.
class ParseFailure : public Error {
public:
    using Error::Error;
};

// A prompt template could not be rendered (missing stage input, cap exceeded,
// undefined variant combination).
class PromptError : public Error {
public:
    using Error::Error;
};

} // namespace cmie
