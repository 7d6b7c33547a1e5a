#include "acraft/generator.hpp"

#include <array>
#include <chrono>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "acraft/rng.hpp"
#include "httplib.h"
#include "json.hpp"

namespace acraft {

namespace {

constexpr std::array<std::string_view, 3> kTransformationNames{"genesis", "refine", "synth"};

constexpr std::array<std::string_view, kInstructionCount> kTemplates{
    "Maximize forgetting of old classes: the poisoned shots should pull the new prototypes "
    "into regions that steal test samples from classes learned in earlier sessions.",
    "Maximize damage to new classes: the poisoned shots should make the prototypes of the "
    "session's own classes useless for their clean test samples.",
    "Reduce attack cost: reach comparable damage with fewer iterations and therefore fewer "
    "gradient evaluations.",
    "Increase stealth: keep the perturbation radius epsilon as small as possible while "
    "preserving as much damage as you can.",
};

constexpr std::string_view kTaskFraming =
    "You design training-time poisoning attacks against a few-shot class-incremental "
    "learner. The learner trains an embedding network on base classes, freezes it, and "
    "then adds each new class as the mean embedding (prototype) of its K training shots. "
    "Test samples are assigned to the nearest prototype. The attacker may perturb the "
    "incremental shots inside an l-infinity ball of radius epsilon with white-box gradient "
    "access; test data is never touched. Damage is measured as the drop of average session "
    "accuracy against a clean run.";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_fitness(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

GeneratorResponse failure(GenerationStatus status, std::string error, std::string transcript,
                          TokenUsage usage, int calls, bool repaired) {
  GeneratorResponse r;
  r.status = status;
  r.error = std::move(error);
  r.transcript = std::move(transcript);
  r.usage = usage;
  r.http_calls = calls;
  r.repaired = repaired;
  return r;
}

struct ChatResult {
  bool ok = false;
  GenerationStatus status = GenerationStatus::ok;
  std::string content;
  std::string error;
  TokenUsage usage;
  int calls = 0;
};

using Message = std::pair<std::string, std::string>;  // role, content

ChatResult chat(const EndpointConfig& endpoint, const std::vector<Message>& messages) {
  nlohmann::json body;
  body["model"] = endpoint.model;
  body["temperature"] = endpoint.temperature;
  body["messages"] = nlohmann::json::array();
  for (const auto& [role, content] : messages) {
    body["messages"].push_back({{"role", role}, {"content", content}});
  }

  httplib::Client client(endpoint.base_url);
  const auto secs = static_cast<time_t>(endpoint.timeout_seconds);
  const auto usecs = static_cast<time_t>((endpoint.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  ChatResult result;
  int backoff = endpoint.backoff_ms;
  const int attempts = std::max(1, endpoint.max_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    ++result.calls;
    auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      result.error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      result.error = "server returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      result.status = GenerationStatus::network_failure;
      result.error = "server returned HTTP " + std::to_string(res->status);
      return result;
    }
    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("choices") ||
        !reply["choices"].is_array() || reply["choices"].empty() ||
        !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content") ||
        !reply["choices"][0]["message"]["content"].is_string()) {
      result.status = GenerationStatus::malformed_response;
      result.error = "response is not a chat completion";
      return result;
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_integer()) {
        result.usage.prompt = u["prompt_tokens"].get<std::int64_t>();
      }
      if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer()) {
        result.usage.completion = u["completion_tokens"].get<std::int64_t>();
      }
    }
    result.ok = true;
    result.content = reply["choices"][0]["message"]["content"].get<std::string>();
    return result;
  }
  result.status = GenerationStatus::network_failure;
  return result;
}

struct Interpretation {
  bool ok = false;
  GenerationStatus status = GenerationStatus::ok;
  std::string problem;
  std::string rationale;
  AttackSpec spec;
};

Interpretation interpret_answer(const std::string& content) {
  Interpretation out;
  const ExtractedAnswer answer = extract_answer(content);
  if (!answer.found) {
    out.status = GenerationStatus::malformed_response;
    out.problem = "the answer contains no ```attackspec fenced block";
    return out;
  }
  try {
    out.spec = parse(answer.document);
  } catch (const SpecError& e) {
    out.status = e.kind() == SpecErrorKind::malformed ? GenerationStatus::malformed_response
                                                      : GenerationStatus::validation_failure;
    out.problem = e.what();
    return out;
  }
  out.ok = true;
  out.rationale = answer.rationale.empty() ? out.spec.rationale : answer.rationale;
  return out;
}

std::string rationale_for(const GeneratorRequest& req) {
  std::string text;
  switch (req.transformation) {
    case Transformation::genesis:
      text = "New attack drawn from the genesis priors";
      break;
    case Transformation::refine:
      text = "Local refinement of " + req.parents.front().id;
      break;
    case Transformation::synth:
      text = "Crossover of";
      for (const AttackSpec& p : req.parents) text += " " + p.id;
      break;
  }
  return text + " (" + std::string(instruction_name(req.instruction.kind)) + ").";
}

}  // namespace

std::string_view transformation_name(Transformation t) {
  return kTransformationNames.at(static_cast<std::size_t>(t));
}

std::string_view status_name(GenerationStatus s) {
  switch (s) {
    case GenerationStatus::ok: return "ok";
    case GenerationStatus::network_failure: return "network_failure";
    case GenerationStatus::malformed_response: return "malformed_response";
    case GenerationStatus::validation_failure: return "validation_failure";
  }
  return "unknown";
}

void check_request(const GeneratorRequest& req) {
  const std::size_t n = req.parents.size();
  switch (req.transformation) {
    case Transformation::genesis:
      if (n != 0) throw std::invalid_argument("genesis takes no parents");
      break;
    case Transformation::refine:
      if (n != 1) throw std::invalid_argument("refine takes exactly one parent");
      break;
    case Transformation::synth:
      if (n < 2) throw std::invalid_argument("synth takes at least two parents");
      break;
  }
  if (!req.parent_fitness.empty() && req.parent_fitness.size() != n) {
    throw std::invalid_argument("parent fitness list does not match the parents");
  }
}

const std::string_view kSpecSchema = R"(Answer with a short rationale in prose, followed by exactly one fenced block
tagged attackspec that holds a JSON object with exactly these keys:
{
  "id": string, nonempty,
  "rationale": string,
  "family": "single_step" | "iterative" | "momentum_iterative",
  "budget": {
    "epsilon": number in (0, 1], l-infinity radius,
    "alpha_step": number in (0, 1], step size,
    "iterations": integer in [0, 20], ignored by single_step
  },
  "mu": number in [0, 1], momentum weight (momentum_iterative only),
  "lambda_rev": number in [-2, 2], nonzero, reversal coefficient (momentum_iterative only),
  "loss": {
    "w_ce_true": number in [-1, 1], weight of cross-entropy on the true class,
    "w_ce_runnerup": number in [-1, 1], subtracted cross-entropy toward the runner-up class,
    "w_proto": number in [-1, 1], squared distance of the embedding to the true prototype
  },
  "step_direction": 1 | -1, 1 ascends the combined loss,
  "random_start": boolean,
  "per_step_projection": boolean
}
At least one loss weight must be nonzero.)";

std::string_view instruction_template(InstructionKind kind) {
  return kTemplates.at(static_cast<std::size_t>(kind));
}

std::string build_prompt(const GeneratorRequest& req) {
  check_request(req);
  std::ostringstream out;
  out << kTaskFraming << "\n\n## Spec format\n" << kSpecSchema << "\n\n## Task\n";
  switch (req.transformation) {
    case Transformation::genesis:
      out << "Invent a new attack from scratch. Explore parts of the design space that "
             "differ from conventional FGSM or PGD settings.\n";
      break;
    case Transformation::refine:
      out << "Refine the parent attack below with a small local change. Keep the child "
             "closely related to the parent.\n";
      break;
    case Transformation::synth:
      out << "Combine the strongest elements of the parent attacks below into one new "
             "attack.\n";
      break;
  }
  out << "\n## Instruction\n" << instruction_template(req.instruction.kind) << '\n';
  if (!req.instruction.payload.empty()) out << req.instruction.payload << '\n';
  if (!req.parents.empty()) {
    out << "\n## Parents\n";
    for (std::size_t i = 0; i < req.parents.size(); ++i) {
      out << "Parent " << (i + 1) << " (fitness "
          << (req.parent_fitness.empty() ? std::string("unknown")
                                         : format_fitness(req.parent_fitness[i]))
          << "):\n```attackspec\n"
          << serialize(req.parents[i]) << "\n```\n";
    }
  }
  return out.str();
}

std::string build_repair_prompt(const std::string& problem) {
  return "Your previous answer could not be used: " + problem +
         "\nReply again with a short rationale and exactly one ```attackspec block that "
         "follows the format above.";
}

std::string naive_prompt() {
  std::ostringstream out;
  out << kTaskFraming << "\n\nOutput a reasonable attack idea along with its implementation.\n\n"
      << kSpecSchema << '\n';
  return out.str();
}

ExtractedAnswer extract_answer(std::string_view content) {
  static constexpr std::string_view kOpen = "```attackspec";
  ExtractedAnswer out;
  const auto open = content.find(kOpen);
  if (open == std::string_view::npos) return out;
  const auto body = content.find('\n', open);
  if (body == std::string_view::npos) return out;
  const auto close = content.find("```", body + 1);
  if (close == std::string_view::npos) return out;
  out.found = true;
  out.rationale = trim(content.substr(0, open));
  out.document = std::string(content.substr(body + 1, close - body - 1));
  return out;
}

GeneratorResponse llm_generate(const GeneratorRequest& req, const EndpointConfig& endpoint) {
  const std::string prompt = build_prompt(req);
  std::vector<Message> messages{{"user", prompt}};
  std::string transcript = "[user]\n" + prompt + "\n";
  TokenUsage usage;
  int calls = 0;
  bool repaired = false;

  for (int round = 0; round < 2; ++round) {
    const ChatResult chat_result = chat(endpoint, messages);
    calls += chat_result.calls;
    usage.prompt += chat_result.usage.prompt;
    usage.completion += chat_result.usage.completion;
    if (!chat_result.ok) {
      return failure(chat_result.status, chat_result.error, transcript, usage, calls, repaired);
    }
    transcript += "[assistant]\n" + chat_result.content + "\n";
    const Interpretation answer = interpret_answer(chat_result.content);
    if (answer.ok) {
      GeneratorResponse r;
      r.rationale = answer.rationale;
      r.spec = answer.spec;
      if (r.spec.rationale.empty()) r.spec.rationale = answer.rationale;
      r.transcript = std::move(transcript);
      r.usage = usage;
      r.http_calls = calls;
      r.repaired = repaired;
      return r;
    }
    if (round == 1) {
      return failure(answer.status, answer.problem, transcript, usage, calls, repaired);
    }
    const std::string repair = build_repair_prompt(answer.problem);
    messages.emplace_back("assistant", chat_result.content);
    messages.emplace_back("user", repair);
    transcript += "[user]\n" + repair + "\n";
    repaired = true;
  }
  return failure(GenerationStatus::malformed_response, "unreachable", transcript, usage, calls,
                 repaired);
}

std::uint64_t mock_seed(const GeneratorRequest& req) {
  return derive_seed(req.seed, {static_cast<std::uint64_t>(req.generation),
                                static_cast<std::uint64_t>(req.transformation)});
}

GeneratorResponse mock_generate(const GeneratorRequest& req, const MockOptions& options) {
  check_request(req);
  const std::uint64_t seed = mock_seed(req);
  GeneratorResponse r;
  switch (req.transformation) {
    case Transformation::genesis:
      r.spec = sample_genesis(seed, 1, options.bounds).front();
      break;
    case Transformation::refine:
      r.spec = mutate(req.parents.front(), options.refine_intensity, seed, options.bounds);
      break;
    case Transformation::synth:
      r.spec = crossover(req.parents, seed);
      break;
  }
  r.rationale = rationale_for(req);
  r.spec.rationale = r.rationale;
  r.transcript = r.rationale + "\n```attackspec\n" + serialize(r.spec) + "\n```\n";
  return r;
}

GeneratorResponse naive_generate(const EndpointConfig& endpoint, std::uint64_t /*seed*/) {
  const std::string prompt = naive_prompt();
  std::string transcript = "[user]\n" + prompt + "\n";
  const ChatResult chat_result = chat(endpoint, {{"user", prompt}});
  if (!chat_result.ok) {
    return failure(chat_result.status, chat_result.error, transcript, chat_result.usage,
                   chat_result.calls, false);
  }
  transcript += "[assistant]\n" + chat_result.content + "\n";
  const Interpretation answer = interpret_answer(chat_result.content);
  if (!answer.ok) {
    return failure(answer.status, answer.problem, transcript, chat_result.usage, chat_result.calls,
                   false);
  }
  GeneratorResponse r;
  r.rationale = answer.rationale;
  r.spec = answer.spec;
  if (r.spec.rationale.empty()) r.spec.rationale = answer.rationale;
  r.transcript = std::move(transcript);
  r.usage = chat_result.usage;
  r.http_calls = chat_result.calls;
  return r;
}

GeneratorResponse naive_generate_mock(std::uint64_t seed, const MockOptions& options) {
  GeneratorRequest req;
  req.seed = seed;
  return mock_generate(req, options);
}

}  // namespace acraft
