#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mscdt/evaluation/phantom.hpp"

namespace mscdt::cli {

struct CorpusItem {
  std::string id;  // directory name, e.g. "phantom_000"
  evaluation::PhantomPair pair;
};

/// Seed of the i-th phantom of a corpus generated from `seed`.
std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index);

std::string phantom_id(std::size_t index);

nlohmann::json spec_to_json(const evaluation::PhantomSpec& spec);
evaluation::PhantomSpec spec_from_json(const nlohmann::json& j);

/// Writes every item under `dir/<id>/`: dual, tracer_k, lesion_k and
/// background_k as .tsr, plus 16-bit PGM views. Returns the written paths
/// relative to `dir`.
std::vector<std::string> write_corpus(const std::filesystem::path& dir,
                                      const std::vector<CorpusItem>& items);

/// Lists item ids: from the "corpus" block of `dir/manifest.json` when
/// present, otherwise every sub-directory holding a dual.tsr, sorted.
std::vector<std::string> corpus_ids(const std::filesystem::path& dir);

/// Loads one item directory (dual, tracers and any region masks).
evaluation::PhantomPair load_item(const std::filesystem::path& item_dir);

std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir);

}  // namespace mscdt::cli
