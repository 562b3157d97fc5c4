#include "agora/corpus.hpp"

#include <json.hpp>

#include <random>
#include <set>
#include <stdexcept>

#include "agora/util.hpp"

using nlohmann::json;

namespace corpus {

int World::relation_index(const std::string& rel) const {
  for (std::size_t i = 0; i < relations.size(); ++i)
    if (relations[i] == rel) return int(i);
  return -1;
}

std::optional<std::string> World::object_of(const std::string& subject,
                                            const std::string& relation) const {
  for (const auto& f : facts)
    if (f.subject == subject && f.relation == relation) return f.object;
  return std::nullopt;
}

World generate_world(std::uint64_t seed, int n_entities, int n_relations,
                     int templates_per_relation) {
  if (n_entities < 2) throw std::invalid_argument("generate_world: need at least 2 entities");
  if (n_relations < 1) throw std::invalid_argument("generate_world: need at least 1 relation");
  if (templates_per_relation < 1)
    throw std::invalid_argument("generate_world: need at least 1 template per relation");

  World w;
  w.seed = seed;
  w.entities.reserve(n_entities);
  for (int i = 0; i < n_entities; ++i) w.entities.push_back("E" + std::to_string(i));
  w.relations.reserve(n_relations);
  for (int j = 0; j < n_relations; ++j) w.relations.push_back("rel" + std::to_string(j));

  w.templates.resize(n_relations);
  for (int j = 0; j < n_relations; ++j)
    for (int v = 0; v < templates_per_relation; ++v)
      w.templates[j].push_back("<s> rel" + std::to_string(j) + " cue" + std::to_string(v));

  std::mt19937_64 rng(util::derive_seed(seed, "world-facts"));
  std::uniform_int_distribution<int> pick(0, n_entities - 1);
  for (int i = 0; i < n_entities; ++i)
    for (int j = 0; j < n_relations; ++j)
      w.facts.push_back({w.entities[i], w.relations[j], w.entities[pick(rng)]});
  return w;
}

std::pair<std::string, std::string> render_fact(const World& world, const FactTriple& triple,
                                                int template_index) {
  int r = world.relation_index(triple.relation);
  if (r < 0) throw std::invalid_argument("render_fact: unknown relation " + triple.relation);
  const auto& tpls = world.templates[r];
  if (template_index < 0 || template_index >= int(tpls.size()))
    throw std::invalid_argument("render_fact: template index " + std::to_string(template_index) +
                                " out of range");
  std::string prompt = tpls[template_index];
  auto pos = prompt.find("<s>");
  if (pos == std::string::npos) throw std::invalid_argument("render_fact: template lacks <s> slot");
  prompt.replace(pos, 3, triple.subject);
  return {prompt, triple.object};
}

namespace {

std::string require_string(const json& rec, std::size_t idx, const char* field) {
  if (!rec.contains(field)) throw util::SchemaError(idx, field, "missing");
  if (!rec[field].is_string()) throw util::SchemaError(idx, field, "expected a string");
  return rec[field].get<std::string>();
}

}  // namespace

std::vector<EditRequest> load_edit_dataset(const std::filesystem::path& path, DatasetSchema) {
  json doc;
  try {
    doc = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("edit dataset " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw util::SchemaError(0, "(root)", "expected a JSON array of records");

  std::vector<EditRequest> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& rec = doc[i];
    if (!rec.is_object()) throw util::SchemaError(i, "(record)", "expected an object");
    EditRequest e;
    e.prompt = require_string(rec, i, "prompt");
    e.triple.subject = require_string(rec, i, "subject");
    e.triple.object = require_string(rec, i, "ground_truth");
    e.target_new = require_string(rec, i, "target_new");
    if (e.target_new == e.triple.object)
      throw util::SchemaError(i, "target_new", "must differ from ground_truth");
    if (e.prompt.find(e.triple.subject) == std::string::npos)
      throw util::SchemaError(i, "prompt", "must mention the subject");
    // The relation is implicit in the prompt for loaded datasets.
    e.triple.relation = rec.value("relation", std::string{});
    if (rec.contains("rephrase")) {
      if (!rec["rephrase"].is_array()) throw util::SchemaError(i, "rephrase", "expected an array");
      for (const auto& r : rec["rephrase"]) {
        if (!r.is_string()) throw util::SchemaError(i, "rephrase", "expected strings");
        std::string text = r.get<std::string>();
        if (text.find(e.triple.subject) == std::string::npos)
          throw util::SchemaError(i, "rephrase", "rephrase must mention the subject");
        e.rephrase_prompts.push_back(std::move(text));
      }
    }
    if (rec.contains("locality")) {
      if (!rec["locality"].is_array()) throw util::SchemaError(i, "locality", "expected an array");
      for (const auto& l : rec["locality"]) {
        if (!l.is_object() || !l.contains("prompt") || !l.contains("answer"))
          throw util::SchemaError(i, "locality", "expected objects with prompt and answer");
        LocalityProbe p{l["prompt"].get<std::string>(), l["answer"].get<std::string>()};
        if (p.prompt.find(e.triple.subject) != std::string::npos)
          throw util::SchemaError(i, "locality", "locality probe must not mention the subject");
        e.locality_probes.push_back(std::move(p));
      }
    }
    e.toxic = rec.value("toxic", false);
    out.push_back(std::move(e));
  }
  return out;
}

void save_edit_dataset(const std::filesystem::path& path, const std::vector<EditRequest>& edits) {
  json doc = json::array();
  for (const auto& e : edits) {
    json rec;
    rec["prompt"] = e.prompt;
    rec["subject"] = e.triple.subject;
    rec["relation"] = e.triple.relation;
    rec["ground_truth"] = e.triple.object;
    rec["target_new"] = e.target_new;
    rec["rephrase"] = e.rephrase_prompts;
    json loc = json::array();
    for (const auto& p : e.locality_probes) loc.push_back({{"prompt", p.prompt}, {"answer", p.answer}});
    rec["locality"] = std::move(loc);
    rec["toxic"] = e.toxic;
    doc.push_back(std::move(rec));
  }
  util::write_file(path, doc.dump(2) + "\n");
}

World load_world(const std::filesystem::path& path) {
  json doc = json::parse(util::read_file(path));
  World w;
  w.seed = doc.at("seed").get<std::uint64_t>();
  w.entities = doc.at("entities").get<std::vector<std::string>>();
  w.relations = doc.at("relations").get<std::vector<std::string>>();
  w.templates = doc.at("templates").get<std::vector<std::vector<std::string>>>();
  for (const auto& f : doc.at("facts"))
    w.facts.push_back({f.at("subject").get<std::string>(), f.at("relation").get<std::string>(),
                       f.at("object").get<std::string>()});
  return w;
}

void save_world(const std::filesystem::path& path, const World& w) {
  json doc;
  doc["seed"] = w.seed;
  doc["entities"] = w.entities;
  doc["relations"] = w.relations;
  doc["templates"] = w.templates;
  json facts = json::array();
  for (const auto& f : w.facts)
    facts.push_back({{"subject", f.subject}, {"relation", f.relation}, {"object", f.object}});
  doc["facts"] = std::move(facts);
  util::write_file(path, doc.dump(2) + "\n");
}

std::vector<EditRequest> make_edit_requests(const World& world, int count, std::uint64_t salt,
                                            int n_locality_probes) {
  if (count < 0) throw std::invalid_argument("make_edit_requests: negative count");
  if (world.facts.empty()) throw std::invalid_argument("make_edit_requests: empty world");

  std::vector<EditRequest> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const FactTriple& fact = world.facts[std::size_t(i) % world.facts.size()];
    EditRequest e;
    e.triple = fact;

    // Deterministic per (subject, relation): scenarios about the same fact share a target.
    std::uint64_t h = util::derive_seed(world.seed ^ salt, fact.subject + "|" + fact.relation);
    std::size_t n = world.entities.size();
    std::size_t pick = std::size_t(h % (n - 1));
    for (std::size_t j = 0, seen = 0; j < n; ++j) {
      if (world.entities[j] == fact.object) continue;
      if (seen++ == pick) {
        e.target_new = world.entities[j];
        break;
      }
    }

    auto [prompt, answer] = render_fact(world, fact, 0);
    (void)answer;
    e.prompt = prompt;
    int r = world.relation_index(fact.relation);
    for (int v = 1; v < int(world.templates[r].size()); ++v)
      e.rephrase_prompts.push_back(render_fact(world, fact, v).first);

    std::mt19937_64 rng(util::derive_seed(world.seed ^ salt, "locality", std::uint64_t(i)));
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < world.facts.size(); ++j)
      if (world.facts[j].subject != fact.subject) candidates.push_back(j);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    int take = std::min<int>(n_locality_probes, int(candidates.size()));
    for (int j = 0; j < take; ++j) {
      const FactTriple& probe = world.facts[candidates[j]];
      auto [pp, pa] = render_fact(world, probe, 0);
      e.locality_probes.push_back({pp, pa});
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace corpus
