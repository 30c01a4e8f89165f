#include <cmath>
#include <regex>

#include "cdrcot/cot_pipeline.hpp"

namespace cdrcot {

std::optional<double> extract_score(std::string_view raw_text) {
    static const std::regex anchored(R"(FINAL_CDR\**\s*:\s*\**\s*([-+]?[0-9]+(?:\.[0-9]+)?))");
    static const std::regex bare(R"(\b[0-3](\.[05])?\b)");
    const std::string text(raw_text);
    std::smatch m;
    if (std::regex_search(text, m, anchored)) return std::stod(m[1].str());
    if (std::regex_search(text, m, bare)) return std::stod(m[0].str());
    return std::nullopt;
}

ClampResult clamp_score(double value, const TaskPair& pair) {
    if (value == pair.low().value()) return {pair.low(), false};
    if (value == pair.high().value()) return {pair.high(), false};
    if (std::isnan(value)) return {pair.low(), true};
    if (std::isinf(value)) return {value > 0 ? pair.high() : pair.low(), true};
    const double to_low = std::abs(value - pair.low().value());
    const double to_high = std::abs(value - pair.high().value());
    return {to_high < to_low ? pair.high() : pair.low(), true};
}

}  // namespace cdrcot
