#include "sylloscope/schemes.hpp"

#include <algorithm>
#include <cctype>

#include "sylloscope/errors.hpp"

namespace syl {

const std::vector<SyllogisticScheme>& all_schemes() {
    static const std::vector<SyllogisticScheme> schemes = {
        {"Barbara", "AAA", 1},
        {"Celarent", "EAE", 1},
        {"Darii", "AII", 1},
        {"Ferio", "EIO", 1},
        {"Camestres", "AEE", 2},
        {"Cesare", "EAE", 2},
        {"Baroco", "AOO", 2},
        {"Festino", "EIO", 2},
        {"Disamis", "IAI", 3},
        {"Datisi", "AII", 3},
        {"Ferison", "EIO", 3},
        {"Bokardo", "OAO", 3},
        {"Dimaris", "IAI", 4},
        {"Camenes", "AEE", 4},
        {"Fresison", "EIO", 4},
    };
    return schemes;
}

const SyllogisticScheme& find_scheme(const std::string& code_or_name) {
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return s;
    };
    const std::string want = lower(code_or_name);
    for (const auto& s : all_schemes()) {
        if (lower(s.code()) == want || lower(s.name) == want) return s;
    }
    throw_data("unknown syllogistic scheme: " + code_or_name);
}

}  // namespace syl
