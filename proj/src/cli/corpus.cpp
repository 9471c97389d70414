#include "mscdt/cli/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "mscdt/cli/image_io.hpp"
#include "mscdt/numerics/rng.hpp"
#include "mscdt/numerics/tsr_io.hpp"

namespace mscdt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index) {
  return CounterRng(seed).split("phantom").split(index).next_u64();
}

std::string phantom_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", index);
  return buf;
}

json spec_to_json(const evaluation::PhantomSpec& spec) {
  std::vector<std::string> patterns;
  for (auto p : spec.patterns) patterns.push_back(evaluation::pattern_name(p));
  return json{{"size", spec.size},         {"tracers", spec.tracers},
              {"blob_count", spec.blob_count}, {"ring_count", spec.ring_count},
              {"patterns", patterns},      {"weights", spec.weights},
              {"divisor", spec.divisor}};
}

evaluation::PhantomSpec spec_from_json(const json& j) {
  evaluation::PhantomSpec s;
  s.size = j.value("size", s.size);
  s.tracers = j.value("tracers", s.tracers);
  s.blob_count = j.value("blob_count", s.blob_count);
  s.ring_count = j.value("ring_count", s.ring_count);
  if (j.contains("patterns")) {
    s.patterns.clear();
    for (const auto& p : j.at("patterns")) s.patterns.push_back(evaluation::parse_pattern(p));
  }
  s.weights = j.value("weights", s.weights);
  s.divisor = j.value("divisor", s.divisor);
  return s;
}

namespace {

Image mask_image(const evaluation::RegionMask& m) {
  Image out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 1.0 : 0.0;
  return out;
}

evaluation::RegionMask region_of(const Image& im) {
  evaluation::RegionMask out(im.shape());
  for (std::size_t i = 0; i < im.size(); ++i) out[i] = im[i] != 0.0 ? 1 : 0;
  return out;
}

}  // namespace

std::vector<std::string> write_corpus(const fs::path& dir,
                                      const std::vector<CorpusItem>& items) {
  std::vector<std::string> written;
  auto emit = [&](const std::string& rel, const Image& im) {
    write_tsr(dir / (rel + ".tsr"), im);
    write_pgm16(dir / (rel + ".pgm"), im);
    written.push_back(rel + ".tsr");
    written.push_back(rel + ".pgm");
  };
  for (const auto& item : items) {
    fs::create_directories(dir / item.id);
    emit(item.id + "/dual", item.pair.dual);
    for (std::size_t k = 0; k < item.pair.singles.size(); ++k) {
      emit(item.id + "/tracer_" + std::to_string(k), item.pair.singles[k]);
    }
    for (const auto& [name, mask] : item.pair.regions) {
      write_tsr(dir / item.id / (name + ".tsr"), mask_image(mask));
      written.push_back(item.id + "/" + name + ".tsr");
    }
  }
  return written;
}

std::vector<std::string> corpus_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("corpus: " + dir.string() + " is not a directory");
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    const auto bytes = read_file_bytes(manifest);
    const json j = json::parse(bytes.begin(), bytes.end());
    if (j.contains("corpus")) return j.at("corpus").at("ids").get<std::vector<std::string>>();
  }
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "dual.tsr")) {
      ids.push_back(e.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::runtime_error("corpus: no items found in " + dir.string());
  return ids;
}

evaluation::PhantomPair load_item(const fs::path& item_dir) {
  evaluation::PhantomPair p;
  p.dual = read_image(item_dir / "dual.tsr");
  for (std::size_t k = 0;; ++k) {
    const auto base = item_dir / ("tracer_" + std::to_string(k) + ".tsr");
    if (!fs::exists(base)) break;
    p.singles.push_back(read_image(base));
    for (const std::string kind : {"lesion_", "background_"}) {
      const auto name = kind + std::to_string(k);
      const auto path = item_dir / (name + ".tsr");
      if (fs::exists(path)) p.regions.emplace(name, region_of(read_image(path)));
    }
  }
  return p;
}

std::vector<CorpusItem> load_corpus(const fs::path& dir) {
  std::vector<CorpusItem> items;
  for (const auto& id : corpus_ids(dir)) items.push_back({id, load_item(dir / id)});
  return items;
}

}  // namespace mscdt::cli
