#include "mtkd/config.hpp"

#include <algorithm>
#include <cstring>

namespace mtkd {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& item : j.items()) {
        const bool ok = std::any_of(known.begin(), known.end(),
                                    [&](const char* k) { return item.key() == k; });
        if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

}  // namespace mtkd
