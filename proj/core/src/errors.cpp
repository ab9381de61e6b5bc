#include "usersim/errors.hpp"

namespace usersim {

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ", ";
        out += id;
    }
    return out;
}

}  // namespace

ReviewConflict::ReviewConflict(std::vector<std::string> stale_ids)
    : Error("review file is stale for: " + join_ids(stale_ids)), stale_ids_(std::move(stale_ids)) {}

}  // namespace usersim
