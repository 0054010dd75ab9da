#include "sid/judge.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "sid/manifest.hpp"

namespace sid {

using nlohmann::json;

namespace {

const char* kSystemText =
    "You are an image generation quality expert evaluating single-image generative models. "
    "A model was trained on exactly one source image and asked to synthesize new samples that "
    "preserve the source's internal statistics. You will see the SOURCE image first and the "
    "GENERATED image second.\n"
    "\n"
    "Score the generated image on two dimensions.\n"
    "\n"
    "Generation quality (0-2 points), focusing on blur, noise, and artifacts:\n"
    "  0: severe blur, heavy noise, or artifacts dominate the image.\n"
    "  1: noticeable blur, noise, or artifacts, but most content reads clearly.\n"
    "  2: clean and sharp; no salient blur, noise, or artifacts.\n"
    "\n"
    "Absence of distortion (0-3 points), measuring structural consistency with the source:\n"
    "  0: object structure is destroyed; shapes are unrecognizable relative to the source.\n"
    "  1: major deformation; key objects are bent, broken, or badly misproportioned.\n"
    "  2: minor warping or local structural flaws; overall layout remains plausible.\n"
    "  3: structures are faithful; objects keep coherent shape, scale, and arrangement.\n"
    "\n"
    "Follow this procedure: first describe the visual features you observe in both images, "
    "then reason step by step about each dimension, and only then output the final score.";

const char* kUserTextTemplate =
    "Rubric version: %s\n"
    "The first attached image is the SOURCE. The second attached image is the GENERATED sample.\n"
    "Describe both images, reason about generation quality (0-2) and absence of distortion "
    "(0-3), then end your reply with exactly one fenced score block of the form:\n"
    "```\n"
    "quality: <0-2>\n"
    "distortion: <0-3>\n"
    "```";

std::string base64_encode(const std::vector<uint8_t>& data) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < data.size(); i += 3) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    if (i + 1 == data.size()) {
        uint32_t v = data[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

}  // namespace

std::string PromptDoc::serialize() const {
    std::string out = "SYSTEM\n" + system_text + "\nUSER\n" + user_text + "\nSOURCE_PNG\n" +
                      base64_encode(source_png) + "\nGENERATED_PNG\n" +
                      base64_encode(generated_png) + "\n";
    return out;
}

PromptDoc build_siqs_prompt(const ImageU8& source, const ImageU8& generated) {
    PromptDoc doc;
    doc.system_text = kSystemText;
    char buf[1024];
    std::snprintf(buf, sizeof(buf), kUserTextTemplate, kSiqsRubricVersion);
    doc.user_text = buf;
    doc.source_png = encode_png(source);
    doc.generated_png = encode_png(generated);
    return doc;
}

SiqsScore parse_siqs_response(const std::string& text) {
    // Locate the last fenced block.
    size_t close = text.rfind("```");
    if (close == std::string::npos || close < 3)
        throw SiqsParseError("response has no fenced score block", text);
    size_t open = text.rfind("```", close - 1);
    if (open == std::string::npos || open == close)
        throw SiqsParseError("response has an unmatched fence", text);
    std::string block = text.substr(open + 3, close - open - 3);

    static const std::regex q_re(R"(quality\s*:\s*(-?\d+))", std::regex::icase);
    static const std::regex d_re(R"(distortion\s*:\s*(-?\d+))", std::regex::icase);
    std::smatch qm, dm;
    if (!std::regex_search(block, qm, q_re) || !std::regex_search(block, dm, d_re))
        throw SiqsParseError("score block is missing quality/distortion lines", text);

    SiqsScore s;
    s.quality = std::stoi(qm[1].str());
    s.distortion = std::stoi(dm[1].str());
    if (s.quality < 0 || s.quality > 2)
        throw std::out_of_range("quality score " + std::to_string(s.quality) +
                                " outside rubric range 0-2");
    if (s.distortion < 0 || s.distortion > 3)
        throw std::out_of_range("distortion score " + std::to_string(s.distortion) +
                                " outside rubric range 0-3");
    s.total = s.quality + s.distortion;
    s.rationale = text.substr(0, open);
    while (!s.rationale.empty() &&
           std::isspace(static_cast<unsigned char>(s.rationale.back())))
        s.rationale.pop_back();
    s.raw_response = text;
    return s;
}

JudgeConfig JudgeConfig::from_env() {
    JudgeConfig c;
    if (const char* e = std::getenv("SID_JUDGE_ENDPOINT")) c.endpoint = e;
    if (const char* e = std::getenv("SID_JUDGE_MODEL")) c.model = e;
    if (const char* e = std::getenv("SID_JUDGE_KEY")) c.api_key = e;
    return c;
}

std::string prompt_pair_hash(const PromptDoc& prompt) {
    std::string src(prompt.source_png.begin(), prompt.source_png.end());
    std::string gen(prompt.generated_png.begin(), prompt.generated_png.end());
    return sha256_hex(src + "|" + gen).substr(0, 16);
}

json build_judge_request(const PromptDoc& prompt, const JudgeConfig& cfg) {
    auto data_url = [](const std::vector<uint8_t>& png) {
        return "data:image/png;base64," + base64_encode(png);
    };
    return json{
        {"model", cfg.model},
        {"metadata", {{"pair_hash", prompt_pair_hash(prompt)}}},
        {"messages",
         json::array(
             {json{{"role", "system"}, {"content", prompt.system_text}},
              json{{"role", "user"},
                   {"content",
                    json::array(
                        {json{{"type", "text"}, {"text", prompt.user_text}},
                         json{{"type", "image_url"},
                              {"image_url", {{"url", data_url(prompt.source_png)}}}},
                         json{{"type", "image_url"},
                              {"image_url", {{"url", data_url(prompt.generated_png)}}}}})}}})}};
}

HttpJudgeTransport::HttpJudgeTransport(JudgeConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty())
        throw std::invalid_argument("judge: no endpoint configured (SID_JUDGE_ENDPOINT)");
}

TransportResponse HttpJudgeTransport::post(const std::string& request_body) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(cfg_.endpoint, m, url_re))
        throw std::invalid_argument("judge: endpoint '" + cfg_.endpoint + "' is not a valid URL");
    std::string host = m[1].str();
    std::string path = m[2].matched && !m[2].str().empty() ? m[2].str() : "/";

    httplib::Client client(host);
    client.set_connection_timeout(cfg_.timeout_sec);
    client.set_read_timeout(cfg_.timeout_sec);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    auto res = client.Post(path, headers, request_body, "application/json");
    if (!res) return {-1, httplib::to_string(res.error())};
    return {res->status, res->body};
}

TransportResponse FixtureJudgeTransport::post(const std::string& request_body) {
    std::string key = "default";
    try {
        json req = json::parse(request_body);
        key = "pair_" + req.at("metadata").at("pair_hash").get<std::string>();
    } catch (const std::exception&) {
        // fall through to default fixture
    }
    namespace fs = std::filesystem;
    fs::path file = fs::path(dir_) / (key + ".json");
    if (!fs::exists(file)) file = fs::path(dir_) / "default.json";
    if (!fs::exists(file))
        return {-1, "fixture directory '" + dir_ + "' has no entry for " + key};
    std::ifstream is(file);
    json doc = json::parse(is);
    return {doc.value("status", 200), doc.at("body").get<std::string>()};
}

namespace {

bool retryable(const TransportResponse& r) {
    return r.status < 0 || r.status == 429 || r.status >= 500;
}

std::string extract_content(const std::string& body) {
    json doc = json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
}

}  // namespace

ScoreOutcome score_image(const ImageU8& source, const ImageU8& generated,
                         JudgeTransport& transport, const JudgeConfig& cfg) {
    PromptDoc prompt = build_siqs_prompt(source, generated);
    std::string body = build_judge_request(prompt, cfg).dump();

    ScoreOutcome out;
    TransportResponse resp;
    double backoff = cfg.backoff_initial_ms;
    for (int attempt = 0;; ++attempt) {
        resp = transport.post(body);
        if (!retryable(resp)) break;
        if (attempt >= cfg.max_retries)
            throw std::runtime_error("judge: transport failed after " +
                                     std::to_string(attempt) + " retries: status " +
                                     std::to_string(resp.status) + " " + resp.body);
        ++out.retries;
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
        backoff *= cfg.backoff_factor;
    }
    if (resp.status != 200)
        throw std::runtime_error("judge: endpoint returned status " + std::to_string(resp.status) +
                                 ": " + resp.body);
    std::string content;
    try {
        content = extract_content(resp.body);
    } catch (const std::exception& e) {
        throw SiqsParseError(std::string("judge: response body is not chat JSON: ") + e.what(),
                             resp.body);
    }
    out.score = parse_siqs_response(content);
    return out;
}

}  // namespace sid
