#include <cstdlib>

#include "doctest.h"
#include "support.hpp"

#include "acraft/generator.hpp"

using namespace acraft;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

GeneratorRequest genesis_request(std::uint64_t seed = 1) {
  GeneratorRequest req;
  req.seed = seed;
  req.instruction.kind = instruction_from_index(0);
  return req;
}

GeneratorRequest refine_request(const AttackSpec& parent, std::uint64_t seed = 1) {
  GeneratorRequest req = genesis_request(seed);
  req.transformation = Transformation::refine;
  req.parents = {parent};
  req.parent_fitness = {12.5};
  req.generation = 3;
  return req;
}

AttackSpec canned() {
  AttackSpec s;
  s.id = "canned";
  s.rationale = "small signed steps";
  s.budget = {0.08, 0.01, 7};
  s.mu = 0.4;
  s.family = Family::momentum_iterative;
  return s;
}

}  // namespace

TEST_CASE("genesis prompt has no parents section") {
  const std::string p = build_prompt(genesis_request());
  CHECK(p.find("## Spec format") != std::string::npos);
  CHECK(p.find("## Instruction") != std::string::npos);
  CHECK(p.find("## Parents") == std::string::npos);
  CHECK(count_of(p, "```attackspec") == 0);
}

TEST_CASE("refine prompt embeds its parent exactly once") {
  const AttackSpec parent = canned();
  const std::string p = build_prompt(refine_request(parent));
  CHECK(count_of(p, "## Parents") == 1);
  CHECK(count_of(p, "```attackspec") == 1);
  CHECK(p.find(serialize(parent)) != std::string::npos);
  CHECK(p == build_prompt(refine_request(parent)));
}

TEST_CASE("request shape is checked") {
  GeneratorRequest req = genesis_request();
  req.parents = {canned()};
  CHECK_THROWS_AS(check_request(req), std::invalid_argument);
  req.transformation = Transformation::synth;
  CHECK_THROWS_AS(check_request(req), std::invalid_argument);
  req.transformation = Transformation::refine;
  req.parent_fitness = {1.0, 2.0};
  CHECK_THROWS_AS(check_request(req), std::invalid_argument);
}

TEST_CASE("answer extraction") {
  const auto a = extract_answer(testing::fenced("  because  ", "{\"x\": 1}"));
  CHECK(a.found);
  CHECK(a.rationale == "because");
  CHECK(a.document == "{\"x\": 1}\n");
  CHECK_FALSE(extract_answer("just prose").found);
  CHECK_FALSE(extract_answer("```attackspec\n{ never closed").found);
}

TEST_CASE("a valid canned answer parses to the canned spec") {
  const AttackSpec expected = canned();
  testing::StubServer stub([&](int, const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::chat_body(testing::fenced("try momentum", serialize(expected))),
                    "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  REQUIRE(r.ok());
  CHECK(r.spec == expected);
  CHECK(r.rationale == "try momentum");
  CHECK(r.http_calls == 1);
  CHECK_FALSE(r.repaired);
  CHECK(r.usage.prompt == 11);
  CHECK(r.usage.completion == 7);
}

TEST_CASE("prose without a block gets one repair round then fails") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::chat_body("I would use a stronger attack."), "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  CHECK(r.status == GenerationStatus::malformed_response);
  CHECK(r.repaired);
  CHECK(r.http_calls == 2);
  CHECK(stub.calls() == 2);
  // the repair round carries the whole conversation
  const auto second = nlohmann::json::parse(stub.bodies().at(1));
  CHECK(second["messages"].size() == 3);
}

TEST_CASE("a repaired answer succeeds") {
  testing::StubServer stub([](int call, const httplib::Request&, httplib::Response& res) {
    const std::string content = call == 1 ? "no block here" : testing::fenced("fixed", serialize(canned()));
    res.set_content(testing::chat_body(content), "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  REQUIRE(r.ok());
  CHECK(r.repaired);
  CHECK(r.spec == canned());
}

TEST_CASE("an out-of-range document is a validation failure") {
  AttackSpec bad = canned();
  auto doc = nlohmann::ordered_json::parse(serialize(bad));
  doc["mu"] = 4.0;
  testing::StubServer stub([&](int, const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::chat_body(testing::fenced("", doc.dump())), "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  CHECK(r.status == GenerationStatus::validation_failure);
  CHECK(r.http_calls == 2);
}

TEST_CASE("timeouts are retried then reported as network failure") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(700));
    res.set_content(testing::chat_body("late"), "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint(0.2));
  CHECK(r.status == GenerationStatus::network_failure);
  CHECK(r.http_calls == 3);
  CHECK_FALSE(r.error.empty());
}

TEST_CASE("server errors are retried") {
  testing::StubServer stub([](int call, const httplib::Request&, httplib::Response& res) {
    if (call < 3) {
      res.status = 503;
      return;
    }
    res.set_content(testing::chat_body(testing::fenced("ok", serialize(canned()))), "application/json");
  });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  REQUIRE(r.ok());
  CHECK(r.http_calls == 3);
}

TEST_CASE("client errors are not retried") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) { res.status = 401; });
  const GeneratorResponse r = llm_generate(genesis_request(), stub.endpoint());
  CHECK(r.status == GenerationStatus::network_failure);
  CHECK(stub.calls() == 1);
}

TEST_CASE("a body that is not a chat completion is malformed") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"unexpected\": true}", "application/json");
  });
  CHECK(llm_generate(genesis_request(), stub.endpoint()).status == GenerationStatus::malformed_response);
}

TEST_CASE("the api key travels only in the authorization header") {
  ::setenv("ACRAFT_TEST_KEY", "sekrit-123", 1);
  std::string auth;
  testing::StubServer stub([&](int, const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    res.set_content(testing::chat_body(testing::fenced("", serialize(canned()))), "application/json");
  });
  EndpointConfig e = stub.endpoint();
  e.api_key_env = "ACRAFT_TEST_KEY";
  const GeneratorResponse r = llm_generate(genesis_request(), e);
  CHECK(auth == "Bearer sekrit-123");
  CHECK(stub.bodies().at(0).find("sekrit") == std::string::npos);
  CHECK(r.transcript.find("sekrit") == std::string::npos);
  ::unsetenv("ACRAFT_TEST_KEY");
}

TEST_CASE("naive generation makes one call and never repairs") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::chat_body("prose only"), "application/json");
  });
  const GeneratorResponse bad = naive_generate(stub.endpoint(), 1);
  CHECK_FALSE(bad.ok());
  CHECK(stub.calls() == 1);
  CHECK_FALSE(bad.repaired);
  const std::string prompt = naive_prompt();
  CHECK(prompt.find("## Parents") == std::string::npos);
}

TEST_CASE("mock genesis samples the genesis prior") {
  const GeneratorRequest req = genesis_request(17);
  const GeneratorResponse r = mock_generate(req);
  REQUIRE(r.ok());
  AttackSpec expected = sample_genesis(mock_seed(req), 1).front();
  expected.rationale = r.spec.rationale;
  CHECK(r.spec == expected);
  CHECK(extract_answer(r.transcript).found);
  CHECK(mock_generate(req).spec == r.spec);
}

TEST_CASE("mock refine stays near its parent") {
  Rng rng(21);
  for (int c = 0; c < 200; ++c) {
    const AttackSpec parent = sample_genesis(rng.next_u64(), 1).front();
    GeneratorRequest req = refine_request(parent, rng.next_u64());
    req.generation = rng.below(50);
    const GeneratorResponse r = mock_generate(req);
    REQUIRE(r.ok());
    CHECK(spec_distance(r.spec, parent) <= 0.1 + 1e-12);
  }
}

TEST_CASE("mock synth draws from its parents") {
  GeneratorRequest req = genesis_request(4);
  req.transformation = Transformation::synth;
  req.parents = sample_genesis(9, 3);
  const GeneratorResponse r = mock_generate(req);
  REQUIRE(r.ok());
  CHECK(validate(r.spec).empty());
  bool family_from_parent = false;
  for (const auto& p : req.parents) family_from_parent |= p.family == r.spec.family;
  CHECK(family_from_parent);
}

TEST_CASE("mock seeds differ across generations and transformations") {
  GeneratorRequest a = genesis_request(5);
  GeneratorRequest b = a;
  b.generation = 1;
  CHECK(mock_seed(a) != mock_seed(b));
  b = a;
  b.transformation = Transformation::refine;
  b.parents = {canned()};
  CHECK(mock_seed(a) != mock_seed(b));
}

TEST_CASE("naive mock equals a genesis mock") {
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    GeneratorRequest req;
    req.seed = seed;
    CHECK(naive_generate_mock(seed).spec == mock_generate(req).spec);
  }
}
