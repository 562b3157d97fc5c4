#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace corpus {

// One unit of editable knowledge: (subject, relation, object).
struct FactTriple {
  std::string subject;
  std::string relation;
  std::string object;

  bool operator==(const FactTriple&) const = default;
};

struct LocalityProbe {
  std::string prompt;
  std::string answer;
  bool operator==(const LocalityProbe&) const = default;
};

// A requested edit (s, r, o -> o*) plus the probes used to score it.
struct EditRequest {
  FactTriple triple;  // holds the old object o
  std::string target_new;
  std::string prompt;
  std::vector<std::string> rephrase_prompts;
  std::vector<LocalityProbe> locality_probes;
  bool toxic = false;

  bool operator==(const EditRequest&) const = default;
};

// A closed synthetic fact world. (subject, relation) -> object is a function.
struct World {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::vector<FactTriple> facts;
  // templates[r][v] is the v-th prompt template for relation r; "<s>" marks the subject slot.
  std::vector<std::vector<std::string>> templates;
  std::uint64_t seed = 0;

  int n_templates() const { return templates.empty() ? 0 : int(templates.front().size()); }
  int relation_index(const std::string& rel) const;
  // Object stored for (subject, relation); empty optional if the pair is unknown.
  std::optional<std::string> object_of(const std::string& subject, const std::string& relation) const;
};

World generate_world(std::uint64_t seed, int n_entities, int n_relations, int templates_per_relation);

// Renders (prompt, answer) for a fact under one of its relation's templates.
std::pair<std::string, std::string> render_fact(const World& world, const FactTriple& triple,
                                                int template_index);

enum class DatasetSchema { counterfact, zsre };

std::vector<EditRequest> load_edit_dataset(const std::filesystem::path& path, DatasetSchema schema);
void save_edit_dataset(const std::filesystem::path& path, const std::vector<EditRequest>& edits);

World load_world(const std::filesystem::path& path);
void save_world(const std::filesystem::path& path, const World& world);

// Builds `count` edit requests over the world's facts (cycling when count exceeds
// the fact count). The counterfactual target for a given (subject, relation) is a
// deterministic function of (world seed, salt), so repeated requests about the same
// fact agree on the target. Rephrase prompts use the relation's alternate templates;
// locality probes are drawn from facts whose subject differs from the edited one.
std::vector<EditRequest> make_edit_requests(const World& world, int count, std::uint64_t salt,
                                            int n_locality_probes = 5);

}  // namespace corpus
