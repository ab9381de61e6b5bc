#pragma once
// Versioned prompt templates loaded from a data directory.
//
// Each template is a text file under <data>/templates/<group>/<name>.txt and
// is addressed as "<group>/<name>". A leading line of the form
//   #! version: 3
// declares the template version and is stripped from the body.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace usersim {

struct Template {
    std::string name;
    std::string version;
    std::string body;
    std::string content_hash;  ///< SHA-256 of the file bytes
};

class TemplateStore {
public:
    TemplateStore() = default;

    /// Loads every *.txt below `templates_dir`.
    static TemplateStore load(const std::filesystem::path& templates_dir);

    /// Adds or replaces a template in memory (tests, overrides).
    void put(std::string name, std::string body, std::string version = "inline");

    const Template& get(std::string_view name) const;
    const std::string& body(std::string_view name) const { return get(name).body; }
    bool contains(std::string_view name) const;

    /// name -> content hash, for run manifests.
    std::map<std::string, std::string> content_hashes() const;

private:
    std::map<std::string, Template, std::less<>> templates_;
};

/// $USERSIM_DATA_DIR if set, else the source-tree data directory, else the installed one.
std::filesystem::path default_data_dir();

}  // namespace usersim
