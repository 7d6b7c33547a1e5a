#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "acraft/spec.hpp"

namespace acraft {

enum class Transformation { genesis, refine, synth };

std::string_view transformation_name(Transformation t);

struct GeneratorRequest {
  Transformation transformation = Transformation::genesis;
  Instruction instruction{};
  std::vector<AttackSpec> parents;     // none for genesis, one for refine, >= 2 for synth
  std::vector<double> parent_fitness;  // aligned with parents; may be empty
  std::size_t generation = 0;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument when the parent count does not fit the
/// transformation or the fitness list is misaligned.
void check_request(const GeneratorRequest& req);

enum class GenerationStatus { ok, network_failure, malformed_response, validation_failure };

std::string_view status_name(GenerationStatus s);

struct TokenUsage {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;
};

struct GeneratorResponse {
  GenerationStatus status = GenerationStatus::ok;
  std::string rationale;
  AttackSpec spec;  // meaningful only when ok()
  std::string transcript;
  TokenUsage usage;
  int http_calls = 0;
  bool repaired = false;  // a repair round was issued
  std::string error;

  bool ok() const { return status == GenerationStatus::ok; }
};

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "gpt-4o-mini";
  double temperature = 0.7;
  double timeout_seconds = 60.0;
  int max_attempts = 3;       // per chat call, network errors only
  int backoff_ms = 500;       // doubled after each failed attempt
  std::string api_key_env = "ACRAFT_API_KEY";
};

/// Human-readable description of the spec document the model must emit.
extern const std::string_view kSpecSchema;

std::string_view instruction_template(InstructionKind kind);

/// Prompt for one generation request. Deterministic.
std::string build_prompt(const GeneratorRequest& req);

/// Follow-up message quoting what was wrong with the previous answer.
std::string build_repair_prompt(const std::string& problem);

/// The one-shot prompt of the naive baseline.
std::string naive_prompt();

struct ExtractedAnswer {
  bool found = false;
  std::string rationale;  // prose before the fenced block, trimmed
  std::string document;   // contents of the ```attackspec block
};

ExtractedAnswer extract_answer(std::string_view content);

GeneratorResponse llm_generate(const GeneratorRequest& req, const EndpointConfig& endpoint);

struct MockOptions {
  double refine_intensity = 0.1;
  SearchBounds bounds{};
};

/// Offline stand-in: genesis samples, refine mutates, synth crosses over,
/// seeded by (seed, generation, transformation).
GeneratorResponse mock_generate(const GeneratorRequest& req, const MockOptions& options = {});

std::uint64_t mock_seed(const GeneratorRequest& req);

/// One prompt, no parents, no feedback, no repair round.
GeneratorResponse naive_generate(const EndpointConfig& endpoint, std::uint64_t seed);
GeneratorResponse naive_generate_mock(std::uint64_t seed, const MockOptions& options = {});

}  // namespace acraft
