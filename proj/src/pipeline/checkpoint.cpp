#include "mscdt/pipeline/checkpoint.hpp"

#include <json.hpp>

#include "mscdt/numerics/tsr_io.hpp"

namespace mscdt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "mscdt-checkpoint-1";

template <typename T>
Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

template <typename T>
json write_blob(const fs::path& dir, const std::string& rel, const Tensor<T>& t) {
  const auto bytes = encode_tsr(t);
  fs::create_directories((dir / rel).parent_path());
  write_file_bytes(dir / rel, bytes);
  return json{{"file", rel}, {"sha256", sha256_hex(bytes)}};
}

template <typename T>
Tensor<T> read_blob(const fs::path& dir, const json& entry, const Shape& expected) {
  const std::string rel = entry.at("file");
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(dir / rel);
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint: cannot read " + rel + ": " + e.what());
  }
  const std::string want = entry.at("sha256");
  const std::string got = sha256_hex(bytes);
  if (got != want) {
    throw CheckpointError("checkpoint: hash mismatch for " + rel + " (manifest " +
                          want + ", file " + got + ")");
  }
  Tensor<T> t = decode_tsr<T>(bytes);
  if (t.shape() != expected) {
    throw CheckpointError("checkpoint: " + rel + " has shape " +
                          shape_string(t.shape()) + ", model expects " +
                          shape_string(expected));
  }
  return t;
}

std::string content_hash(json manifest) {
  manifest.erase("run");
  const std::string text = manifest.dump(2);
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_manifest(const fs::path& dir, std::string* hash) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(dir / "manifest.json");
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint: cannot read manifest in " + dir.string() +
                          ": " + e.what());
  }
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint: malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (j.value("format", std::string{}) != kFormat) {
    throw CheckpointError("checkpoint: " + dir.string() + " is not a " + kFormat +
                          " directory");
  }
  if (hash) *hash = content_hash(j);
  return j;
}

}  // namespace

template <typename T>
std::string save_checkpoint(const Model<T>& model, const Adam<T>* optimizer,
                            const CheckpointMeta& meta, const fs::path& dir,
                            const json& run) {
  fs::create_directories(dir);
  json params = json::array();
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    json e = write_blob(dir, "params/" + p.name() + ".tsr", p.value);
    e["name"] = p.name();
    e["shape"] = p.value.shape();
    params.push_back(std::move(e));
  }
  json opt = nullptr;
  if (optimizer) {
    json moments = json::array();
    for (std::size_t i = 0; i < store.size(); ++i) {
      const std::string& name = store[i].name();
      moments.push_back(
          {{"name", name},
           {"m", write_blob(dir, "opt/" + name + ".m.tsr", optimizer->first_moment(i))},
           {"v", write_blob(dir, "opt/" + name + ".v.tsr", optimizer->second_moment(i))}});
    }
    opt = {{"steps_taken", optimizer->steps_taken()}, {"moments", std::move(moments)}};
  }
  json tail = json::array();
  for (const auto& l : meta.loss_tail) tail.push_back({l.total, l.dm, l.tm});
  json train;
  to_json(train, meta.train);
  json mcfg;
  to_json(mcfg, model.config());
  json manifest{{"format", kFormat},
                      {"dtype", precision_name(precision_of<T>())},
                      {"model", mcfg},
                      {"train", train},
                      {"step", meta.step},
                      {"seed", meta.train.seed},
                      {"loss_tail", tail},
                      {"params", params},
                      {"optimizer", opt}};
  const std::string hash = content_hash(manifest);
  if (!run.is_null()) manifest["run"] = run;
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  return hash;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& dir) {
  LoadedCheckpoint<T> out;
  const json j = read_manifest(dir, &out.content_hash);
  out.stored_precision = parse_precision(j.at("dtype"));
  ModelConfig mcfg = ModelConfig::toy();
  from_json(j.at("model"), mcfg);
  from_json(j.at("train"), out.meta.train);
  out.meta.train.model = mcfg;
  out.meta.step = j.at("step");
  for (const auto& l : j.at("loss_tail")) {
    out.meta.loss_tail.push_back({l.at(0), l.at(1), l.at(2)});
  }

  out.model = std::make_unique<Model<T>>(mcfg);
  auto& store = out.model->parameters();
  const auto& params = j.at("params");
  if (params.size() != store.size()) {
    throw CheckpointError("checkpoint: manifest lists " + std::to_string(params.size()) +
                          " parameters, model has " + std::to_string(store.size()));
  }
  for (const auto& e : params) {
    Parameter<T>* p = store.find(e.at("name"));
    if (!p) {
      throw CheckpointError("checkpoint: unknown parameter " + e.at("name").get<std::string>());
    }
    p->value = read_blob<T>(dir, e, p->value.shape());
  }

  const auto& opt = j.at("optimizer");
  if (!opt.is_null()) {
    out.optimizer = std::make_unique<Adam<T>>(store, out.meta.train.adam);
    out.optimizer->set_steps_taken(opt.at("steps_taken"));
    for (const auto& e : opt.at("moments")) {
      const std::string name = e.at("name");
      std::size_t idx = store.size();
      for (std::size_t i = 0; i < store.size(); ++i) {
        if (store[i].name() == name) idx = i;
      }
      if (idx == store.size()) throw CheckpointError("checkpoint: unknown moment " + name);
      const Shape& shape = store[idx].value.shape();
      out.optimizer->first_moment(idx) = read_blob<T>(dir, e.at("m"), shape);
      out.optimizer->second_moment(idx) = read_blob<T>(dir, e.at("v"), shape);
    }
  }
  return out;
}

Precision checkpoint_precision(const fs::path& dir) {
  return parse_precision(read_manifest(dir, nullptr).at("dtype"));
}

std::string checkpoint_hash(const fs::path& dir) {
  std::string h;
  read_manifest(dir, &h);
  return h;
}

template std::string save_checkpoint(const Model<float>&, const Adam<float>*,
                                     const CheckpointMeta&, const fs::path&, const json&);
template std::string save_checkpoint(const Model<double>&, const Adam<double>*,
                                     const CheckpointMeta&, const fs::path&, const json&);
template LoadedCheckpoint<float> load_checkpoint(const fs::path&);
template LoadedCheckpoint<double> load_checkpoint(const fs::path&);

}  // namespace mscdt::pipeline
