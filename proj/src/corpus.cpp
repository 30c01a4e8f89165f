#include "cdrcot/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cdrcot/csv.hpp"
#include "cdrcot/digest.hpp"

namespace cdrcot {

using json = nlohmann::json;

// CdrLabel ---------------------------------------------------------------------

std::optional<CdrLabel> CdrLabel::from_value(double v) {
    if (v == 0.5) return very_mild();
    if (v == 1.0) return mild();
    if (v == 2.0) return moderate();
    if (v == 3.0) return severe();
    return std::nullopt;
}

std::optional<CdrLabel> CdrLabel::parse(std::string_view text) {
    text = trim(text);
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) return std::nullopt;
    return from_value(v);
}

double CdrLabel::value() const {
    switch (grade_) {
        case Grade::VeryMild: return 0.5;
        case Grade::Mild: return 1.0;
        case Grade::Moderate: return 2.0;
        case Grade::Severe: return 3.0;
    }
    return 0.0;
}

std::string_view CdrLabel::text() const {
    switch (grade_) {
        case Grade::VeryMild: return "0.5";
        case Grade::Mild: return "1";
        case Grade::Moderate: return "2";
        case Grade::Severe: return "3";
    }
    return "?";
}

// TaskPair ---------------------------------------------------------------------

TaskPair::TaskPair(CdrLabel low, CdrLabel high) : low_(low), high_(high) {
    if (!(low < high)) {
        throw std::invalid_argument("task pair requires low < high, got " + std::string(low.text()) + " and " +
                                    std::string(high.text()));
    }
}

std::string TaskPair::key() const {
    return std::string(low_.text()) + "v" + std::string(high_.text());
}

TaskPair TaskPair::parse(std::string_view text) {
    const auto sep = text.find_first_of("v:-");
    if (sep == std::string_view::npos) {
        throw std::invalid_argument("task pair must look like 0.5v1: '" + std::string(text) + "'");
    }
    auto low = CdrLabel::parse(text.substr(0, sep));
    auto high = CdrLabel::parse(text.substr(sep + 1));
    if (!low || !high) {
        throw std::invalid_argument("task pair has a non-CDR grade: '" + std::string(text) + "'");
    }
    return TaskPair(*low, *high);
}

const std::vector<TaskPair>& TaskPair::canonical() {
    static const std::vector<TaskPair> pairs = {
        TaskPair(CdrLabel::very_mild(), CdrLabel::mild()),
        TaskPair(CdrLabel::very_mild(), CdrLabel::moderate()),
        TaskPair(CdrLabel::very_mild(), CdrLabel::severe()),
        TaskPair(CdrLabel::mild(), CdrLabel::severe()),
    };
    return pairs;
}

// Errors -----------------------------------------------------------------------

MalformedRowError::MalformedRowError(MalformedRow row)
    : std::runtime_error("malformed row at line " + std::to_string(row.line) + ": " + row.reason),
      row_(std::move(row)) {}

EmptyClassError::EmptyClassError(const TaskPair& pair, CdrLabel missing)
    : std::runtime_error("subset " + pair.key() + " has no records labelled " + std::string(missing.text())),
      missing_(missing) {}

// Text helpers -----------------------------------------------------------------

std::string_view trim(std::string_view s) {
    constexpr std::string_view kSpace = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(kSpace);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(kSpace);
    return s.substr(b, e - b + 1);
}

std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

// Parsing ----------------------------------------------------------------------

CorpusFormat parse_format(std::string_view name) {
    if (name == "jsonl") return CorpusFormat::Jsonl;
    if (name == "csv") return CorpusFormat::Csv;
    throw std::invalid_argument("unknown corpus format '" + std::string(name) + "' (expected jsonl or csv)");
}

CorpusFormat format_from_path(std::string_view path) {
    const auto dot = path.rfind('.');
    std::string ext = dot == std::string_view::npos ? std::string() : std::string(path.substr(dot + 1));
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == "csv") return CorpusFormat::Csv;
    if (ext == "jsonl" || ext == "ndjson" || ext == "json") return CorpusFormat::Jsonl;
    throw std::invalid_argument("cannot infer corpus format from '" + std::string(path) + "'; use .jsonl or .csv");
}

namespace {

// Throws MalformedRowError when a required field is absent or invalid.
PatientRecord make_record(std::size_t line, std::string id, std::string s_note, std::string assessment,
                          const std::optional<CdrLabel>& label, std::string_view raw_cdr) {
    if (trim(id).empty()) throw MalformedRowError({line, "empty id"});
    if (trim(s_note).empty()) throw MalformedRowError({line, "empty s_note"});
    if (!label) throw MalformedRowError({line, "cdr '" + std::string(raw_cdr) + "' is not one of 0.5, 1, 2, 3"});
    return PatientRecord{std::move(id), std::move(s_note), std::move(assessment), *label};
}

PatientRecord record_from_json_line(std::size_t line, std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw MalformedRowError({line, std::string("invalid JSON: ") + e.what()});
    }
    if (!j.is_object()) throw MalformedRowError({line, "row is not a JSON object"});
    auto text_field = [&](const char* key) -> std::string {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) throw MalformedRowError({line, std::string("missing field ") + key});
        if (!it->is_string()) throw MalformedRowError({line, std::string("field ") + key + " is not a string"});
        return it->get<std::string>();
    };
    std::string id = text_field("id");
    std::string s_note = text_field("s_note");
    std::string assessment = text_field("assessment");
    auto it = j.find("cdr");
    if (it == j.end() || it->is_null()) throw MalformedRowError({line, "missing field cdr"});
    std::optional<CdrLabel> label;
    std::string raw;
    if (it->is_number()) {
        label = CdrLabel::from_value(it->get<double>());
        raw = it->dump();
    } else if (it->is_string()) {
        raw = it->get<std::string>();
        label = CdrLabel::parse(raw);
    } else {
        raw = it->dump();
    }
    return make_record(line, std::move(id), std::move(s_note), std::move(assessment), label, raw);
}

}  // namespace

ParseResult parse_corpus(std::istream& in, CorpusFormat format, bool lenient) {
    ParseResult result;
    auto attempt = [&](auto&& build) {
        try {
            result.records.push_back(build());
        } catch (const MalformedRowError& e) {
            if (!lenient) throw;
            result.skipped.push_back(e.row());
        }
    };

    if (format == CorpusFormat::Jsonl) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            attempt([&] { return record_from_json_line(line_no, line); });
        }
        return result;
    }

    std::vector<csv::Row> rows;
    try {
        rows = csv::read(in);
    } catch (const std::runtime_error& e) {
        throw MalformedRowError({0, e.what()});
    }
    if (rows.empty()) return result;
    const std::vector<std::string> expected = {"id", "s_note", "assessment", "cdr"};
    auto header = rows.front().fields;
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    if (header != expected) {
        throw MalformedRowError({rows.front().line, "CSV header must be id,s_note,assessment,cdr"});
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        attempt([&] {
            if (row.fields.size() != 4) {
                throw MalformedRowError(
                    {row.line, "expected 4 fields, found " + std::to_string(row.fields.size())});
            }
            return make_record(row.line, row.fields[0], row.fields[1], row.fields[2],
                               CdrLabel::parse(row.fields[3]), row.fields[3]);
        });
    }
    return result;
}

namespace {

std::string jsonl_line(const PatientRecord& r) {
    std::string out = "{\"id\":";
    out += json(r.patient_id).dump();
    out += ",\"s_note\":";
    out += json(r.subjective).dump();
    out += ",\"assessment\":";
    out += json(r.assessment).dump();
    out += ",\"cdr\":";
    out += r.label.text();
    out += "}";
    return out;
}

}  // namespace

void write_corpus(std::ostream& out, const std::vector<PatientRecord>& records, CorpusFormat format) {
    if (format == CorpusFormat::Jsonl) {
        out << canonical_jsonl(records);
        return;
    }
    csv::write_row(out, {"id", "s_note", "assessment", "cdr"});
    for (const auto& r : records) {
        csv::write_row(out, {r.patient_id, r.subjective, r.assessment, std::string(r.label.text())});
    }
}

std::string canonical_jsonl(const std::vector<PatientRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += jsonl_line(r);
        out += '\n';
    }
    return out;
}

std::string corpus_digest(const std::vector<PatientRecord>& records) {
    return sha256_hex(canonical_jsonl(records));
}

// Cleaning ---------------------------------------------------------------------

std::vector<PatientRecord> dedup_longest(const std::vector<PatientRecord>& records) {
    std::vector<PatientRecord> out;
    std::vector<std::size_t> best_len;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& r : records) {
        const std::size_t len = utf8_length(r.subjective) + utf8_length(r.assessment);
        auto [it, inserted] = slot.try_emplace(r.patient_id, out.size());
        if (inserted) {
            out.push_back(r);
            best_len.push_back(len);
        } else if (len > best_len[it->second]) {
            // Strictly longer only: ties keep the earliest occurrence.
            out[it->second] = r;
            best_len[it->second] = len;
        }
    }
    return out;
}

FilterResult drop_empty_assessment(const std::vector<PatientRecord>& records) {
    FilterResult result;
    for (const auto& r : records) {
        if (trim(r.assessment).empty()) {
            ++result.removed;
        } else {
            result.records.push_back(r);
        }
    }
    return result;
}

std::vector<PatientRecord> build_subset(const std::vector<PatientRecord>& records, const TaskPair& pair) {
    std::vector<PatientRecord> out;
    std::size_t n_low = 0;
    std::size_t n_high = 0;
    for (const auto& r : records) {
        if (r.label == pair.low()) ++n_low;
        if (r.label == pair.high()) ++n_high;
        if (pair.contains(r.label)) out.push_back(r);
    }
    if (n_low == 0) throw EmptyClassError(pair, pair.low());
    if (n_high == 0) throw EmptyClassError(pair, pair.high());
    return out;
}

// Splitting --------------------------------------------------------------------

namespace {

// Unbiased draw in [0, bound) by rejecting the low 2^64 mod bound values.
std::uint64_t bounded_draw(std::mt19937_64& engine, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = engine();
        if (r >= threshold) return r % bound;
    }
}

}  // namespace

SubsetSplit split_stratified(const std::vector<PatientRecord>& subset, const TaskPair& pair, double ratio,
                             std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split ratio must lie in (0, 1)");
    }
    std::vector<bool> in_test(subset.size(), false);
    for (CdrLabel label : {pair.low(), pair.high()}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (subset[i].label == label) members.push_back(i);
        }
        if (members.empty()) throw EmptyClassError(pair, label);

        const auto grade_code = static_cast<std::uint64_t>(label.grade()) + 1;
        std::mt19937_64 engine(splitmix64(seed ^ (grade_code * 0x9e3779b97f4a7c15ULL)));
        for (std::size_t i = members.size() - 1; i > 0; --i) {
            std::swap(members[i], members[bounded_draw(engine, i + 1)]);
        }
        const auto n_test =
            static_cast<std::size_t>(std::lround((1.0 - ratio) * static_cast<double>(members.size())));
        for (std::size_t i = 0; i < n_test && i < members.size(); ++i) in_test[members[i]] = true;
    }

    SubsetSplit split{pair, {}, {}, seed};
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (!pair.contains(subset[i].label)) {
            throw std::invalid_argument("record " + subset[i].patient_id + " is outside pair " + pair.key());
        }
        (in_test[i] ? split.test : split.train).push_back(subset[i]);
    }
    return split;
}

json split_manifest(const SubsetSplit& split, const std::string& digest) {
    json train = json::array();
    json test = json::array();
    for (const auto& r : split.train) train.push_back(r.patient_id);
    for (const auto& r : split.test) test.push_back(r.patient_id);
    return json{{"pair", split.pair.key()},
                {"seed", split.split_seed},
                {"corpus_digest", digest},
                {"train", std::move(train)},
                {"test", std::move(test)}};
}

}  // namespace cdrcot
