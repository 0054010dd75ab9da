#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/image.hpp"

namespace sid {

// Structured judgment from the scoring rubric: generation quality worth 2
// points, absence of distortion worth 3.
struct SiqsScore {
    int quality = 0;     // 0..2
    int distortion = 0;  // 0..3
    int total = 0;       // quality + distortion
    std::string rationale;
    std::string raw_response;
};

class SiqsParseError : public std::runtime_error {
public:
    SiqsParseError(const std::string& what, std::string raw)
        : std::runtime_error(what), raw_text(std::move(raw)) {}
    std::string raw_text;
};

// Deterministic prompt document: role framing, the leveled rubric, both
// images, chain-of-thought instructions, and the score-block grammar the
// parser expects. serialize() is byte-stable for identical inputs.
struct PromptDoc {
    std::string system_text;
    std::string user_text;
    std::vector<uint8_t> source_png;
    std::vector<uint8_t> generated_png;

    std::string serialize() const;
};

inline constexpr const char* kSiqsRubricVersion = "siqs-rubric-v1";

PromptDoc build_siqs_prompt(const ImageU8& source, const ImageU8& generated);

// Extracts the final fenced score block, validates rubric bounds, recomputes
// the total. Throws SiqsParseError when the block is missing or malformed and
// std::out_of_range when scores leave the rubric.
SiqsScore parse_siqs_response(const std::string& text);

struct TransportResponse {
    int status = 0;  // negative: transport-level failure
    std::string body;
};

class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    virtual TransportResponse post(const std::string& request_body) = 0;
};

struct JudgeConfig {
    std::string endpoint;  // full URL of a chat-style JSON endpoint
    std::string model = "gpt-4o";
    std::string api_key;
    int max_retries = 3;
    double backoff_initial_ms = 500.0;
    double backoff_factor = 2.0;
    int timeout_sec = 60;

    // SID_JUDGE_ENDPOINT, SID_JUDGE_MODEL, SID_JUDGE_KEY, SID_JUDGE_FIXTURES.
    static JudgeConfig from_env();
};

// Live HTTPS/HTTP transport over the configured endpoint.
class HttpJudgeTransport : public JudgeTransport {
public:
    explicit HttpJudgeTransport(JudgeConfig cfg);
    TransportResponse post(const std::string& request_body) override;

private:
    JudgeConfig cfg_;
};

// Offline replay from a fixture directory: responses are keyed by the content
// hash of the image pair ("pair_<hash>.json"), with "default.json" as the
// fallback. Each file holds {"status": int, "body": string}.
class FixtureJudgeTransport : public JudgeTransport {
public:
    explicit FixtureJudgeTransport(std::string dir) : dir_(std::move(dir)) {}
    TransportResponse post(const std::string& request_body) override;

private:
    std::string dir_;
};

// Builds the chat request JSON sent over the transport; exposed for tests and
// for fixture keying (the pair hash is embedded as metadata).
nlohmann::json build_judge_request(const PromptDoc& prompt, const JudgeConfig& cfg);
std::string prompt_pair_hash(const PromptDoc& prompt);

struct ScoreOutcome {
    SiqsScore score;
    int retries = 0;
};

// Sends the prompt, parses the response; retries transient failures (HTTP
// 429/5xx and transport errors) with exponential backoff up to max_retries.
ScoreOutcome score_image(const ImageU8& source, const ImageU8& generated,
                         JudgeTransport& transport, const JudgeConfig& cfg);

}  // namespace sid
