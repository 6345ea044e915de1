#pragma once

// Loads the bundled golden cases and mini corpus for tests. The data
// directory comes from CMS_DATA_DIR (set by CTest) or defaults to ./data.

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "cms/generate.hpp"

namespace fixtures {

inline std::string data_dir() {
  const char* env = std::getenv("CMS_DATA_DIR");
  return env != nullptr ? env : "data";
}

struct GoldenTask {
  std::string name;
  std::string archetype;
  std::string original;
  std::string prompt_source;
  std::string prompt;
  std::string generated_span;
  std::string generated_smiles;
  std::vector<std::string> notes;
  cms::gen::PromptSpec prompt_spec;       // markers positioned on prompt_source
  cms::gen::PromptSpec reintegrate_spec;  // markers positioned on original
};

inline std::vector<GoldenTask> load_golden_tasks() {
  std::ifstream in(data_dir() + "/golden_tasks.json");
  if (!in) throw std::runtime_error("cannot open golden_tasks.json under " + data_dir());
  nlohmann::json doc;
  in >> doc;

  std::vector<GoldenTask> tasks;
  for (const auto& t : doc.at("tasks")) {
    GoldenTask task;
    task.name = t.at("name");
    task.archetype = t.at("archetype");
    task.original = t.at("original");
    task.prompt_source = t.at("prompt_source");
    task.prompt = t.at("prompt");
    task.generated_span = t.at("generated_span");
    task.generated_smiles = t.at("generated_smiles");
    for (const auto& n : t.at("notes")) task.notes.push_back(n);

    int mask_index = 0;
    for (const auto& m : t.at("markers")) {
      cms::gen::Marker prompt_marker;
      prompt_marker.kind = m.at("kind") == "mask" ? cms::corpus::SpanKind::Mask
                                                  : cms::corpus::SpanKind::S2s;
      prompt_marker.start = m.at("prompt_start");
      prompt_marker.masked_length = m.at("masked_length");
      prompt_marker.generated_length = m.at("generated_length");
      prompt_marker.index =
          prompt_marker.kind == cms::corpus::SpanKind::Mask ? ++mask_index : 1;

      cms::gen::Marker reintegrate_marker = prompt_marker;
      reintegrate_marker.start = m.at("reintegrate_start");
      reintegrate_marker.masked_length = m.at("reintegrate_masked_length");

      task.prompt_spec.markers.push_back(prompt_marker);
      task.reintegrate_spec.markers.push_back(reintegrate_marker);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

inline std::vector<std::string> load_mini_corpus() {
  std::ifstream in(data_dir() + "/mini_corpus.smi");
  if (!in) throw std::runtime_error("cannot open mini_corpus.smi under " + data_dir());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace fixtures
