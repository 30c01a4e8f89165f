#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "cdrcot/corpus.hpp"

namespace cdrcot::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "cdrcot-XXXXXX").string();
        path_ = ::mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline PatientRecord record(std::string id, std::string s, std::string a, CdrLabel label) {
    return PatientRecord{std::move(id), std::move(s), std::move(a), label};
}

inline std::string fixture(const std::string& name) { return std::string(CDRCOT_FIXTURE_DIR) + "/" + name; }

/// Runs the CLI with `args`; returns its exit code. Output goes to `log`.
inline int run_cli(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(CDRCOT_CLI_PATH) + " " + args + " >" + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
    static constexpr std::string_view alphabet = "abcdefghij klmnop,qrs\"tuv wxyz\n0123.5;é";
    std::string s;
    const std::size_t n = rng() % (max_len + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = rng() % alphabet.size();
        // Keep multi-byte characters whole.
        if (static_cast<unsigned char>(alphabet[at]) >= 0x80) {
            s += "é";
        } else {
            s += alphabet[at];
        }
    }
    return s;
}

inline CdrLabel random_label(std::mt19937_64& rng) { return CdrLabel(CdrLabel::kAllGrades[rng() % 4]); }

}  // namespace cdrcot::testing
