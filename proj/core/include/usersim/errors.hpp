#pragma once
// Exception types shared across the engine.
//
// Every failure the library surfaces derives from usersim::Error so callers
// can catch broadly at command boundaries and narrowly everywhere else.

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace usersim {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or incomplete configuration (option lists, run config, templates).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Backend output that cannot be coerced into the expected schema.
/// `where` names the failing dimension or field path.
class SchemaError : public Error {
public:
    SchemaError(std::string where, const std::string& what)
        : Error(where + ": " + what), where_(std::move(where)) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

/// Failure to parse a structured block; `axis` carries the offending key.
class ParseError : public Error {
public:
    ParseError(std::string axis, const std::string& what)
        : Error(axis.empty() ? what : axis + ": " + what), axis_(std::move(axis)) {}
    const std::string& axis() const noexcept { return axis_; }

private:
    std::string axis_;
};

class InvalidDelta : public Error {
public:
    using Error::Error;
};

class NoTargetList : public Error {
public:
    using Error::Error;
};

class ContextOrderError : public Error {
public:
    using Error::Error;
};

class InvalidRequest : public Error {
public:
    using Error::Error;
};

class WeightError : public Error {
public:
    using Error::Error;
};

class GroupTooSmall : public Error {
public:
    using Error::Error;
};

class MixedPromptGroup : public Error {
public:
    MixedPromptGroup(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class EmptyPool : public Error {
public:
    using Error::Error;
};

class TrapFormatError : public Error {
public:
    using Error::Error;
};

class NotReviewed : public Error {
public:
    using Error::Error;
};

class ReviewConflict : public Error {
public:
    explicit ReviewConflict(std::vector<std::string> stale_ids);
    const std::vector<std::string>& stale_ids() const noexcept { return stale_ids_; }

private:
    std::vector<std::string> stale_ids_;
};

class ItemMismatch : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class StoreError : public Error {
public:
    using Error::Error;
};

/// Judge verdict missing or out of range after the bounded retries.
class JudgeFormatError : public Error {
public:
    JudgeFormatError(std::string metric, const std::string& what)
        : Error(metric + ": " + what), metric_(std::move(metric)) {}
    const std::string& metric() const noexcept { return metric_; }

private:
    std::string metric_;
};

class LockError : public Error {
public:
    using Error::Error;
};

}  // namespace usersim
