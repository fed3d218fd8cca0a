#pragma once

#include "mtkd/common.hpp"

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>

namespace mtkd {

/// A configuration document is malformed or names an unknown key.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Throws ConfigError if `j` is not an object or holds a key outside `known`.
/// `where` names the section in the message.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                const std::string& where);

/// j.value(key, fallback) with type errors reported as ConfigError.
template <class T>
T config_value(const nlohmann::json& j, const char* key, const T& fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": key '" + key + "' has the wrong type");
    }
}

}  // namespace mtkd
