#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cdrcot {

/// Clinical Dementia Rating grade. Only 0.5, 1, 2 and 3 are constructible.
class CdrLabel {
public:
    enum class Grade : std::uint8_t { VeryMild = 0, Mild = 1, Moderate = 2, Severe = 3 };

    constexpr explicit CdrLabel(Grade g) : grade_(g) {}

    /// Exact match against the four grades; anything else is nullopt.
    static std::optional<CdrLabel> from_value(double v);
    /// Accepts "0.5", "1", "1.0", "2.00", ... Rejects non-grade numbers and junk.
    static std::optional<CdrLabel> parse(std::string_view text);

    static constexpr CdrLabel very_mild() { return CdrLabel(Grade::VeryMild); }
    static constexpr CdrLabel mild() { return CdrLabel(Grade::Mild); }
    static constexpr CdrLabel moderate() { return CdrLabel(Grade::Moderate); }
    static constexpr CdrLabel severe() { return CdrLabel(Grade::Severe); }
    static constexpr std::array<Grade, 4> kAllGrades{Grade::VeryMild, Grade::Mild, Grade::Moderate,
                                                     Grade::Severe};

    constexpr Grade grade() const { return grade_; }
    double value() const;
    /// Canonical text: "0.5", "1", "2", "3".
    std::string_view text() const;

    friend constexpr auto operator<=>(CdrLabel a, CdrLabel b) { return a.grade_ <=> b.grade_; }
    friend constexpr bool operator==(CdrLabel a, CdrLabel b) = default;

private:
    Grade grade_;
};

struct PatientRecord {
    std::string patient_id;
    std::string subjective;
    std::string assessment;
    CdrLabel label = CdrLabel::very_mild();

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// One-vs-one task: two grades with low < high.
class TaskPair {
public:
    TaskPair(CdrLabel low, CdrLabel high);

    CdrLabel low() const { return low_; }
    CdrLabel high() const { return high_; }
    bool contains(CdrLabel l) const { return l == low_ || l == high_; }
    CdrLabel other(CdrLabel l) const { return l == low_ ? high_ : low_; }

    /// "0.5v1", "1v3", ...
    std::string key() const;
    /// Accepts "0.5v1", "0.5:1" and "0.5-1".
    static TaskPair parse(std::string_view text);

    /// (0.5,1), (0.5,2), (0.5,3), (1,3).
    static const std::vector<TaskPair>& canonical();

    friend bool operator==(const TaskPair&, const TaskPair&) = default;

private:
    CdrLabel low_;
    CdrLabel high_;
};

struct SubsetSplit {
    TaskPair pair;
    std::vector<PatientRecord> train;
    std::vector<PatientRecord> test;
    std::uint64_t split_seed = 0;
};

enum class CorpusFormat { Jsonl, Csv };

/// By extension, case-insensitive: .csv, or .jsonl/.ndjson/.json. Throws std::invalid_argument otherwise.
CorpusFormat format_from_path(std::string_view path);
CorpusFormat parse_format(std::string_view name);

struct MalformedRow {
    std::size_t line = 0;
    std::string reason;
};

class MalformedRowError : public std::runtime_error {
public:
    explicit MalformedRowError(MalformedRow row);
    const MalformedRow& row() const { return row_; }

private:
    MalformedRow row_;
};

class EmptyClassError : public std::runtime_error {
public:
    EmptyClassError(const TaskPair& pair, CdrLabel missing);
    CdrLabel missing() const { return missing_; }

private:
    CdrLabel missing_;
};

struct ParseResult {
    std::vector<PatientRecord> records;
    std::vector<MalformedRow> skipped;
};

/// Reads one record per row. Strict mode throws MalformedRowError on the first
/// bad row; lenient mode skips and reports it.
ParseResult parse_corpus(std::istream& in, CorpusFormat format, bool lenient = false);

void write_corpus(std::ostream& out, const std::vector<PatientRecord>& records, CorpusFormat format);

/// JSONL with fixed key order and canonical label text; the digest input.
std::string canonical_jsonl(const std::vector<PatientRecord>& records);
std::string corpus_digest(const std::vector<PatientRecord>& records);

/// Number of Unicode scalar values in a UTF-8 string.
std::size_t utf8_length(std::string_view s);
std::string_view trim(std::string_view s);

std::vector<PatientRecord> dedup_longest(const std::vector<PatientRecord>& records);

struct FilterResult {
    std::vector<PatientRecord> records;
    std::size_t removed = 0;
};

FilterResult drop_empty_assessment(const std::vector<PatientRecord>& records);

/// Records labelled pair.low or pair.high, input order kept.
std::vector<PatientRecord> build_subset(const std::vector<PatientRecord>& records, const TaskPair& pair);

/// Independent per-class shuffles; `ratio` is the training fraction.
SubsetSplit split_stratified(const std::vector<PatientRecord>& subset, const TaskPair& pair, double ratio,
                             std::uint64_t seed);

nlohmann::json split_manifest(const SubsetSplit& split, const std::string& corpus_digest);

// Synthetic corpus ------------------------------------------------------------

/// Machine-readable severity marker planted in synthetic notes, e.g. "<cue:severe>".
std::string_view cue_token(CdrLabel label);
/// Every cue token found in `text`, in order of appearance.
std::vector<CdrLabel> find_cue_tokens(std::string_view text);

struct SyntheticOptions {
    std::size_t n_per_label = 10;
    std::uint64_t seed = 0;
    /// Probability that a note picks up a filler clause borrowed from another grade.
    double noise_rate = 0.2;
};

std::vector<PatientRecord> generate_synthetic(const SyntheticOptions& options);

}  // namespace cdrcot
