#include "usersim/templates.hpp"

#include <cstdlib>

#include "usersim/errors.hpp"
#include "usersim/util.hpp"

#ifndef USERSIM_DEFAULT_DATA_DIR
#define USERSIM_DEFAULT_DATA_DIR "share/usersim"
#endif

namespace usersim {

namespace {

Template parse_template(std::string name, const std::string& bytes) {
    Template t;
    t.name = std::move(name);
    t.content_hash = sha256_hex(bytes);
    t.version = "0";
    std::string_view body(bytes);
    if (body.starts_with("#!")) {
        const auto nl = body.find('\n');
        const auto header = trim(body.substr(2, nl == std::string_view::npos ? std::string_view::npos : nl - 2));
        if (header.starts_with("version:")) t.version = trim(std::string_view(header).substr(8));
        body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
    }
    t.body = std::string(body);
    return t;
}

}  // namespace

TemplateStore TemplateStore::load(const std::filesystem::path& templates_dir) {
    if (!std::filesystem::is_directory(templates_dir)) {
        throw ConfigError("template directory not found: " + templates_dir.string());
    }
    TemplateStore store;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(templates_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        auto rel = std::filesystem::relative(entry.path(), templates_dir);
        rel.replace_extension();
        auto name = rel.generic_string();
        store.templates_[name] = parse_template(name, read_file(entry.path()));
    }
    return store;
}

void TemplateStore::put(std::string name, std::string body, std::string version) {
    Template t;
    t.name = name;
    t.version = std::move(version);
    t.content_hash = sha256_hex(body);
    t.body = std::move(body);
    templates_[std::move(name)] = std::move(t);
}

const Template& TemplateStore::get(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("missing template '" + std::string(name) + "'");
    return it->second;
}

bool TemplateStore::contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

std::map<std::string, std::string> TemplateStore::content_hashes() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, t] : templates_) out[name] = t.content_hash;
    return out;
}

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("USERSIM_DATA_DIR"); env != nullptr && *env != '\0') return env;
    // Source tree first (build-tree use), then the installed copy.
    if (std::filesystem::exists(USERSIM_DEFAULT_DATA_DIR)) return USERSIM_DEFAULT_DATA_DIR;
    return USERSIM_INSTALL_DATA_DIR;
}

}  // namespace usersim
