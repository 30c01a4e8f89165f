#include <array>
#include <cstdio>
#include <random>

#include "cdrcot/corpus.hpp"
#include "cdrcot/digest.hpp"

namespace cdrcot {

namespace {

struct PhraseBank {
    std::vector<std::string_view> onset;
    std::vector<std::string_view> symptoms;
    std::vector<std::string_view> impressions;
};

// Note fragments follow the shape of real S/A notes for each grade.
const PhraseBank& bank(CdrLabel label) {
    static const std::array<PhraseBank, 4> banks = {{
        {{"insidious onset with progressive poor memory", "spouse reports gradual forgetfulness",
          "patient notices slower recall over the past year"},
         {"forgets conversation details but able to manage home affairs", "occasional confusion reported by spouse",
          "mild memory deficits, independent in daily activities", "repeats questions now and then",
          "still drives familiar routes without trouble"},
         {"mild impairment in orientation and memory domains; functional independence maintained",
          "vague responses, questionable impairment, daily independence preserved",
          "very mild cognitive decline, self-care intact"}},
        {{"WITH daughter, deterioration over months", "family describes worsening forgetfulness",
          "multiple complaints of forgetfulness"},
         {"misplacing items and poor concentration", "sometimes fails to find way home",
          "needs reminders for appointments and bills", "withdrawn from community activities",
          "difficulty handling money"},
         {"mild to moderate decline, impaired attention span, partial insight preserved",
          "mild dementia with clear functional impact outside the home",
          "impaired judgment for complex problems, needs prompting for chores"}},
        {{"progressive for years with poor memory", "family members note marked decline",
          "caregiver reports steady worsening"},
         {"reduced self-care", "occasional urinary incontinence reported", "requires assistance for daily tasks",
          "disoriented to time and often to place", "only simple chores retained"},
         {"cognitive decline with temporal disorientation, impaired judgment, and dependency for daily activities",
          "moderate dementia, needs help dressing and with hygiene",
          "severely impaired problem solving, not independent outside the home"}},
        {{"request application for disability certificate due to long-term confusion",
          "long-standing severe confusion", "bed bound for months per caregiver"},
         {"unable to recognize relatives", "total dependence for self-care", "nonverbal most of the day",
          "frequent incontinence", "requires full assistance with feeding"},
         {"consistent with severe dementia picture; bed bound, nonverbal, requires full assistance",
          "total dependence, nonverbal, no meaningful orientation",
          "severe memory loss with only fragments remaining, full-time care required"}},
    }};
    return banks[static_cast<std::size_t>(label.grade())];
}

constexpr std::array<std::string_view, 6> kFillers = {
    "per family report", "history limited", "follow-up requested", "?", "poor sleep lately",
    "medication adherence unclear",
};

template <typename Range>
std::string_view pick(std::mt19937_64& rng, const Range& options) {
    return options[rng() % options.size()];
}

}  // namespace

std::string_view cue_token(CdrLabel label) {
    switch (label.grade()) {
        case CdrLabel::Grade::VeryMild: return "<cue:very_mild>";
        case CdrLabel::Grade::Mild: return "<cue:mild>";
        case CdrLabel::Grade::Moderate: return "<cue:moderate>";
        case CdrLabel::Grade::Severe: return "<cue:severe>";
    }
    return {};
}

std::vector<CdrLabel> find_cue_tokens(std::string_view text) {
    std::vector<CdrLabel> out;
    std::size_t pos = 0;
    while ((pos = text.find("<cue:", pos)) != std::string_view::npos) {
        bool matched = false;
        for (auto g : CdrLabel::kAllGrades) {
            const auto tok = cue_token(CdrLabel(g));
            if (text.compare(pos, tok.size(), tok) == 0) {
                out.push_back(CdrLabel(g));
                pos += tok.size();
                matched = true;
                break;
            }
        }
        if (!matched) pos += 5;
    }
    return out;
}

std::vector<PatientRecord> generate_synthetic(const SyntheticOptions& options) {
    if (options.n_per_label == 0) {
        throw std::invalid_argument("n_per_label must be at least 1");
    }
    std::mt19937_64 rng(splitmix64(options.seed));
    auto chance = [&](double p) { return unit_interval(rng()) < p; };

    std::vector<PatientRecord> records;
    records.reserve(options.n_per_label * 4);
    std::size_t serial = 0;
    for (std::size_t i = 0; i < options.n_per_label; ++i) {
        for (auto g : CdrLabel::kAllGrades) {
            const CdrLabel label(g);
            const auto& b = bank(label);

            std::string s(pick(rng, b.onset));
            s += "; ";
            const std::size_t first = rng() % b.symptoms.size();
            const std::size_t second = (first + 1 + rng() % (b.symptoms.size() - 1)) % b.symptoms.size();
            s += b.symptoms[first];
            s += "; ";
            s += b.symptoms[second];
            if (chance(options.noise_rate)) {
                // Borrow a clause from any grade, never its cue.
                const auto other = CdrLabel(CdrLabel::kAllGrades[rng() % 4]);
                s += "; ";
                s += pick(rng, bank(other).symptoms);
            }
            if (chance(options.noise_rate)) {
                s += " (";
                s += pick(rng, kFillers);
                s += ")";
            }
            s += ". ";
            s += cue_token(label);

            std::string a(pick(rng, b.impressions));
            if (chance(options.noise_rate)) {
                a += "; ";
                a += pick(rng, kFillers);
            }
            a += ". ";
            a += cue_token(label);

            char id[32];
            std::snprintf(id, sizeof id, "syn-%06zu", ++serial);
            records.push_back(PatientRecord{id, std::move(s), std::move(a), label});
        }
    }
    return records;
}

}  // namespace cdrcot
