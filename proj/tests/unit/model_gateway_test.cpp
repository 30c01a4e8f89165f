#include <gtest/gtest.h>

#include <deque>
#include <filesystem>
#include <thread>

#include "cdrcot/cot_pipeline.hpp"
#include "cdrcot/model_gateway.hpp"
#include "support.hpp"

using namespace cdrcot;
using namespace cdrcot::testing;

namespace {

const TaskPair k05v3(CdrLabel::very_mild(), CdrLabel::severe());
const TaskPair k1v3(CdrLabel::mild(), CdrLabel::severe());

ChatRequest request_for(const PromptBundle& b, std::int64_t seed = 42, const std::string& model = "mock:m") {
    return ChatRequest{model, b.messages, 0.7, seed, 512};
}

BackendConfig mock_config(double skill = 1.0, double malformed = 0.0) {
    BackendConfig c;
    c.name = "m";
    c.kind = BackendKind::Mock;
    c.model = "mock:m";
    c.mock_skill = skill;
    c.mock_malformed_rate = malformed;
    return c;
}

/// Replays a fixed script of outcomes and counts calls.
class ScriptedBackend : public ChatBackend {
public:
    enum class Step { Ok, Transient, Auth, Protocol, EmptyStop };

    explicit ScriptedBackend(std::deque<Step> script, std::shared_ptr<int> calls)
        : script_(std::move(script)), calls_(std::move(calls)) {}

    ChatResponse send(const ChatRequest& request) override {
        ++*calls_;
        const Step step = script_.empty() ? Step::Ok : script_.front();
        if (!script_.empty()) script_.pop_front();
        switch (step) {
            case Step::Transient: throw TransientError("HTTP 503");
            case Step::Auth: throw AuthError("HTTP 401");
            case Step::Protocol: throw ProtocolError("garbled");
            case Step::EmptyStop: return ChatResponse{"", FinishReason::Stop, 0, id()};
            case Step::Ok: break;
        }
        return ChatResponse{"reply seed " + std::to_string(request.seed), FinishReason::Stop, 5, id()};
    }
    std::string id() const override { return "scripted"; }

private:
    std::deque<Step> script_;
    std::shared_ptr<int> calls_;
};

using Step = ScriptedBackend::Step;

struct Harness {
    std::shared_ptr<int> calls = std::make_shared<int>(0);
    std::vector<std::chrono::milliseconds> sleeps;
    std::unique_ptr<Gateway> gateway;

    Harness(std::deque<Step> script, int max_retries, std::shared_ptr<ResponseCache> cache = nullptr) {
        BackendConfig c = mock_config();
        c.max_retries = max_retries;
        c.backoff_base_ms = 100;
        gateway = std::make_unique<Gateway>(c, std::make_unique<ScriptedBackend>(std::move(script), calls), cache,
                                            nullptr, [this](std::chrono::milliseconds d) { sleeps.push_back(d); });
    }
};

ChatRequest simple_request(std::int64_t seed = 1) {
    return ChatRequest{"model", {{Role::System, "sys"}, {Role::User, "hello"}}, 0.0, seed, 64};
}

const PatientRecord kSevere = record("s1", "bed bound <cue:severe>", "total dependence <cue:severe>", CdrLabel::severe());
const PatientRecord kVeryMild =
    record("v1", "forgets names <cue:very_mild>", "questionable impairment <cue:very_mild>", CdrLabel::very_mild());

}  // namespace

// Requests and keys ------------------------------------------------------------------

TEST(ChatRequest, Validation) {
    auto r = simple_request();
    EXPECT_NO_THROW(r.validate());
    r.temperature = 2.5;
    EXPECT_THROW(r.validate(), std::invalid_argument);
    r = simple_request();
    r.messages.clear();
    EXPECT_THROW(r.validate(), std::invalid_argument);
    r = simple_request();
    r.max_tokens = 0;
    EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(CacheKey, StableAndSensitive) {
    const auto base = simple_request();
    EXPECT_EQ(cache_key(base), cache_key(simple_request()));
    EXPECT_EQ(cache_key(base).size(), 64u);

    auto seed = base;
    seed.seed = 2;
    EXPECT_NE(cache_key(seed), cache_key(base));

    auto reordered = base;
    reordered.messages = {{Role::System, "sys"}, {Role::User, "a"}, {Role::User, "b"}};
    auto swapped = reordered;
    std::swap(swapped.messages[1], swapped.messages[2]);
    EXPECT_NE(cache_key(reordered), cache_key(swapped));

    auto model = base;
    model.model_name = "other";
    auto temp = base;
    temp.temperature = 0.1;
    auto max = base;
    max.max_tokens = 65;
    auto role = base;
    role.messages[1].role = Role::Assistant;
    for (const auto& changed : {model, temp, max, role}) EXPECT_NE(cache_key(changed), cache_key(base));
}

TEST(CacheKey, RandomFieldChangesProperty) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        ChatRequest r{random_text(rng, 8), {{Role::User, random_text(rng, 30) + "x"}}, 0.5, std::int64_t(rng() % 100),
                      100};
        auto changed = r;
        switch (rng() % 4) {
            case 0: changed.model_name += "!"; break;
            case 1: changed.messages[0].content += "!"; break;
            case 2: changed.seed += 1; break;
            default: changed.max_tokens += 1; break;
        }
        EXPECT_NE(cache_key(r), cache_key(changed));
        EXPECT_EQ(cache_key(r), cache_key(ChatRequest(r)));
    }
}

TEST(ChatResponse, JsonRoundTrip) {
    const ChatResponse r{"text", FinishReason::Length, 12, "b"};
    const auto back = response_from_json(to_json(r));
    EXPECT_EQ(back.text, r.text);
    EXPECT_EQ(back.finish_reason, r.finish_reason);
    EXPECT_EQ(back.latency_ms, r.latency_ms);
    EXPECT_EQ(back.backend_id, r.backend_id);
}

TEST(BackendConfig, ValidationAndRedaction) {
    BackendConfig http;
    http.name = "remote";
    http.kind = BackendKind::Http;
    http.model = "m";
    EXPECT_THROW(http.validate(), std::invalid_argument);
    http.base_url = "http://localhost:1/v1";
    EXPECT_NO_THROW(http.validate());
    const auto j = http.to_json();
    EXPECT_EQ(j.at("auth_env_var"), "OPENAI_API_KEY");
    EXPECT_EQ(j.dump().find("Bearer"), std::string::npos);

    auto mock = mock_config(1.5);
    EXPECT_THROW(mock.validate(), std::invalid_argument);
    mock = mock_config(1.0, -0.1);
    EXPECT_THROW(mock.validate(), std::invalid_argument);
}

// Mock backend ----------------------------------------------------------------------

TEST(MockBackend, AlwaysStops) {
    MockBackend mock(mock_config());
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const ChatRequest r{"mock:m", {{Role::User, random_text(rng, 50) + "?"}}, 0.0, std::int64_t(i), 16};
        const auto resp = mock.send(r);
        EXPECT_EQ(resp.finish_reason, FinishReason::Stop);
        EXPECT_FALSE(resp.text.empty());
        EXPECT_EQ(resp.latency_ms, 0);
    }
}

TEST(MockBackend, SkillOneScoresPlantedLabel) {
    MockBackend mock(mock_config(1.0));
    for (const auto& rec : generate_synthetic({10, 3, 0.3})) {
        for (const auto& pair : TaskPair::canonical()) {
            if (!pair.contains(rec.label)) continue;
            for (std::int64_t seed = 42; seed < 46; ++seed) {
                const auto resp = mock.send(request_for(prompt_kit::render_cot_prompt(rec, pair, 0, true), seed));
                const auto v = validate_cot_json(resp.text, pair);
                ASSERT_TRUE(std::holds_alternative<CotAnalysis>(v)) << resp.text;
                EXPECT_EQ(std::get<CotAnalysis>(v).cdr_score, rec.label);
            }
        }
    }
}

TEST(MockBackend, SkillZeroScoresOtherLabel) {
    MockBackend mock(mock_config(0.0));
    const auto resp = mock.send(request_for(prompt_kit::render_cot_prompt(kSevere, k05v3, 0, true)));
    const auto v = validate_cot_json(resp.text, k05v3);
    ASSERT_TRUE(std::holds_alternative<CotAnalysis>(v));
    EXPECT_EQ(std::get<CotAnalysis>(v).cdr_score, CdrLabel::very_mild());
}

TEST(MockBackend, MalformedRateOneAlwaysFailsValidation) {
    MockBackend mock(mock_config(1.0, 1.0));
    std::set<ValidationCategory> seen;
    for (std::int64_t seed = 0; seed < 200; ++seed) {
        const auto resp = mock.send(request_for(prompt_kit::render_cot_prompt(kSevere, k05v3, 0, true), seed));
        const auto v = validate_cot_json(resp.text, k05v3);
        ASSERT_TRUE(std::holds_alternative<ValidationError>(v)) << resp.text;
        seen.insert(std::get<ValidationError>(v).category);
    }
    // The broken variants exercise several rejection categories.
    EXPECT_GE(seen.size(), 4u);
}

TEST(MockBackend, ZeroShotAndClassify) {
    MockBackend mock(mock_config(1.0));
    const auto zs = mock.send(request_for(prompt_kit::render_zero_shot_prompt(kSevere, k1v3, true)));
    EXPECT_EQ(extract_score(zs.text), 3.0);

    const std::string narrative =
        "Mostly <cue:severe> and again <cue:severe>, once <cue:mild>, plus <cue:very_mild> which is out of pair.";
    const auto cls = mock.send(request_for(prompt_kit::render_classification_prompt(narrative, k1v3)));
    EXPECT_EQ(extract_score(cls.text), 3.0);

    const auto tie = mock.send(
        request_for(prompt_kit::render_classification_prompt("<cue:mild> then <cue:severe>", k1v3)));
    EXPECT_EQ(extract_score(tie.text), 1.0);

    const auto none = mock.send(request_for(prompt_kit::render_classification_prompt("no cues here", k1v3)));
    EXPECT_FALSE(extract_score(none.text).has_value());
}

TEST(MockBackend, AggregateCarriesCues) {
    MockBackend mock(mock_config(1.0));
    std::vector<CotAnalysis> analyses(4);
    for (auto& a : analyses) {
        a.reasoning_steps = {"s"};
        a.domains = {"m", "o", "j", "c", "h", "p"};
        a.assessment = "Consistent with CDR 3 <cue:severe>.";
        a.cdr_score = CdrLabel::severe();
    }
    const auto resp = mock.send(request_for(prompt_kit::render_aggregation_prompt(analyses)));
    EXPECT_EQ(find_cue_tokens(resp.text).size(), 4u);
}

TEST(MockBackend, PureFunctionProperty) {
    MockBackend a(mock_config(0.5, 0.3));
    MockBackend b(mock_config(0.5, 0.3));
    std::mt19937_64 rng(8);
    const auto corpus = generate_synthetic({5, 9, 0.5});
    for (int trial = 0; trial < 200; ++trial) {
        const auto& rec = corpus[rng() % corpus.size()];
        const auto& pair = rec.label == CdrLabel::very_mild() ? k05v3 : k1v3;
        const std::int64_t seed = std::int64_t(rng() % 5000);
        PromptBundle bundle;
        switch (rng() % 3) {
            case 0: bundle = prompt_kit::render_cot_prompt(rec, pair.contains(rec.label) ? pair : k05v3, 0, true); break;
            case 1: bundle = prompt_kit::render_zero_shot_prompt(rec, pair, rng() % 2); break;
            default: bundle = prompt_kit::render_classification_prompt(rec.subjective + random_text(rng, 20), pair);
        }
        const auto r = request_for(bundle, seed);
        EXPECT_EQ(a.send(r).text, a.send(r).text);
        EXPECT_EQ(a.send(r).text, b.send(r).text);
    }
}

TEST(MockBackend, SkillIsRoughlyHonoured) {
    MockBackend mock(mock_config(0.7));
    int correct = 0;
    const auto corpus = generate_synthetic({100, 21, 0.2});
    int n = 0;
    for (const auto& rec : corpus) {
        if (!k05v3.contains(rec.label)) continue;
        ++n;
        const auto v = validate_cot_json(mock.send(request_for(prompt_kit::render_cot_prompt(rec, k05v3, 0, true))).text,
                                         k05v3);
        correct += std::get<CotAnalysis>(v).cdr_score == rec.label;
    }
    EXPECT_NEAR(static_cast<double>(correct) / n, 0.7, 0.1);
}

// Gateway -----------------------------------------------------------------------------

TEST(Gateway, RetriesTransientThenSucceeds) {
    Harness h({Step::Transient, Step::Transient, Step::Ok}, 3);
    const auto resp = h.gateway->complete(simple_request(7));
    EXPECT_EQ(resp.text, "reply seed 7");
    EXPECT_EQ(*h.calls, 3);
    EXPECT_EQ(h.gateway->stats().retries, 2u);
    ASSERT_EQ(h.sleeps.size(), 2u);
    EXPECT_GE(h.sleeps[0].count(), 100);
    EXPECT_LT(h.sleeps[0].count(), 200);
    EXPECT_GE(h.sleeps[1].count(), 200);
    EXPECT_LT(h.sleeps[1].count(), 300);
}

TEST(Gateway, ExhaustedRetriesIsTransportError) {
    Harness h({Step::Transient, Step::Transient, Step::Transient, Step::Transient, Step::Transient}, 2);
    EXPECT_THROW(h.gateway->complete(simple_request()), TransportError);
    EXPECT_EQ(*h.calls, 3);
    EXPECT_LE(h.gateway->stats().retries, 2u);
}

TEST(Gateway, AuthIsTerminal) {
    Harness h({Step::Auth, Step::Ok}, 3);
    EXPECT_THROW(h.gateway->complete(simple_request()), AuthError);
    EXPECT_EQ(*h.calls, 1);
    EXPECT_TRUE(h.sleeps.empty());
}

TEST(Gateway, ProtocolErrorsAreNotRetried) {
    Harness h({Step::Protocol}, 3);
    EXPECT_THROW(h.gateway->complete(simple_request()), ProtocolError);
    EXPECT_EQ(*h.calls, 1);
    Harness empty({Step::EmptyStop}, 3);
    EXPECT_THROW(empty.gateway->complete(simple_request()), ProtocolError);
}

TEST(Gateway, BackoffJitterIsDeterministic) {
    Harness a({}, 3);
    Harness b({}, 3);
    for (int retry = 1; retry <= 3; ++retry) {
        const auto r = simple_request(11);
        EXPECT_EQ(a.gateway->backoff_delay(r, retry), b.gateway->backoff_delay(r, retry));
        const auto d = a.gateway->backoff_delay(r, retry).count();
        EXPECT_GE(d, 100 << (retry - 1));
        EXPECT_LT(d, (100 << (retry - 1)) + 100);
    }
}

TEST(Gateway, SecondIdenticalRequestServedFromCache) {
    auto cache = std::make_shared<ResponseCache>();
    Harness h({}, 0, cache);
    const auto first = h.gateway->complete(simple_request(3));
    const auto second = h.gateway->complete(simple_request(3));
    EXPECT_EQ(*h.calls, 1);
    EXPECT_EQ(h.gateway->stats().cache_hits, 1u);
    EXPECT_EQ(first.text, second.text);
    h.gateway->complete(simple_request(4));
    EXPECT_EQ(*h.calls, 2);
}

TEST(ResponseCache, PersistsToDirectory) {
    TempDir dir;
    const auto req = simple_request(9);
    {
        auto cache = std::make_shared<ResponseCache>(dir / "cache");
        Harness h({}, 0, cache);
        h.gateway->complete(req);
    }
    const auto file = std::filesystem::path(dir / "cache") / (cache_key(req) + ".json");
    ASSERT_TRUE(std::filesystem::exists(file));
    const auto j = nlohmann::json::parse(slurp(file.string()));
    EXPECT_EQ(j.at("request"), canonical_request_json(req));
    EXPECT_EQ(j.at("response").at("text"), "reply seed 9");

    auto reopened = std::make_shared<ResponseCache>(dir / "cache");
    Harness h({Step::Auth}, 0, reopened);
    EXPECT_EQ(h.gateway->complete(req).text, "reply seed 9");
    EXPECT_EQ(*h.calls, 0);
}

TEST(ConcurrencyLimit, BoundsInFlightCalls) {
    struct Probe : ChatBackend {
        std::atomic<int> now{0};
        std::atomic<int> peak{0};
        ChatResponse send(const ChatRequest&) override {
            const int n = ++now;
            int p = peak.load();
            while (n > p && !peak.compare_exchange_weak(p, n)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
            --now;
            return {"ok", FinishReason::Stop, 0, "probe"};
        }
        std::string id() const override { return "probe"; }
    };
    auto probe = std::make_unique<Probe>();
    Probe* raw = probe.get();
    Gateway g(mock_config(), std::move(probe), nullptr, std::make_shared<ConcurrencyLimit>(2));
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&g, i] { g.complete(simple_request(i)); });
    for (auto& t : threads) t.join();
    EXPECT_LE(raw->peak.load(), 2);
    EXPECT_GE(raw->peak.load(), 1);
}

TEST(Complete, OneShotMock) {
    const auto resp = complete(request_for(prompt_kit::render_zero_shot_prompt(kVeryMild, k05v3, true)), mock_config());
    EXPECT_EQ(resp.finish_reason, FinishReason::Stop);
    EXPECT_EQ(extract_score(resp.text), 0.5);
}
