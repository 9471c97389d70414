#include "mscdt/cli/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mscdt/cli/corpus.hpp"
#include "mscdt/cli/image_io.hpp"
#include "mscdt/evaluation/metrics.hpp"
#include "mscdt/numerics/tsr_io.hpp"
#include "mscdt/pipeline/checkpoint.hpp"

namespace mscdt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

struct Context {
  std::ostream& out;
  std::ostream& err;
  Clock::time_point start = Clock::now();

  double elapsed() const {
    return std::chrono::duration<double>(Clock::now() - start).count();
  }
};

// ---- option structs (field names double as flag and JSON keys) ----

struct PhantomOpts {
  std::uint64_t seed = 7;
  std::size_t count = 4;
  std::size_t size = 32;
  std::size_t tracers = 2;
  std::size_t blobs = 3;
  std::size_t rings = 1;
  std::string out;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomOpts, seed, count, size, tracers,
                                                blobs, rings, out)

struct SeparateOpts {
  std::string ckpt;
  std::string input;
  std::string out;
  std::uint64_t seed = 0;
  double alpha = 0.9;
  int tau = 180;
  std::size_t threads = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SeparateOpts, ckpt, input, out, seed, alpha,
                                                tau, threads)

struct EvaluateOpts {
  std::string pred;
  std::string truth;
  std::string regions;
  std::string out;
  std::string which = "fused";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvaluateOpts, pred, truth, regions, out,
                                                which)

struct LbpOpts {
  std::string input;
  std::string out;
  int tau = 180;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LbpOpts, input, out, tau)

struct SweepOpts {
  std::string ckpt;
  std::string data;
  std::string out;
  std::vector<int> taus = {120, 150, 180, 200};
  std::uint64_t seed = 0;
  double alpha = 0.9;
  std::string which = "fused";
  std::size_t threads = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepOpts, ckpt, data, out, taus, seed,
                                                alpha, which, threads)

struct TrainOpts {
  std::string data;
  std::string out;
  std::size_t log_every = 100;
  pipeline::TrainConfig train;
};

struct TrainOverrides {
  std::string config;
  std::optional<std::size_t> steps, batch, threads;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, alpha, teacher_forcing;
  std::optional<int> tau;
  std::optional<std::string> precision;
};

json train_opts_json(const TrainOpts& o) {
  json t;
  pipeline::to_json(t, o.train);
  return json{{"data", o.data}, {"out", o.out}, {"log_every", o.log_every}, {"train", t}};
}

TrainOpts train_opts_from(const json& j) {
  TrainOpts o;
  o.data = j.at("data");
  o.out = j.at("out");
  o.log_every = j.value("log_every", o.log_every);
  pipeline::from_json(j.at("train"), o.train);
  return o;
}

// ---- helpers ----

json read_json(const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot read " + path.string() + ": " + e.what());
  }
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw UsageError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json run_manifest(const std::string& command, const json& options, json seed,
                  std::vector<std::string> inputs, std::vector<std::string> outputs,
                  double wall, json checkpoint_hash) {
  return json{{"command", command},
              {"options", options},
              {"seed", std::move(seed)},
              {"tool_version", kToolVersion},
              {"inputs", std::move(inputs)},
              {"outputs", std::move(outputs)},
              {"wall_clock_seconds", wall},
              {"checkpoint_hash", std::move(checkpoint_hash)}};
}

void write_manifest(const fs::path& path, const json& manifest) {
  write_text(path, manifest.dump(2) + "\n");
}

// Manifest location for a single-file output.
fs::path sidecar(const fs::path& file) { return fs::path(file.string() + ".manifest.json"); }

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("--" + flag + " is required");
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string output_prefix(const std::string& which) {
  if (which == "fused") return "tracer";
  if (which == "raw") return "raw";
  throw UsageError("--which must be 'fused' or 'raw', got '" + which + "'");
}

double guarded_metric(const std::function<double()>& f, const std::string& what,
                      std::ostream& err) {
  try {
    return f();
  } catch (const std::exception& e) {
    err << "warning: " << what << ": " << e.what() << "\n";
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::vector<evaluation::MetricsRow> score(const std::string& id,
                                          const std::vector<Image>& pred,
                                          const evaluation::PhantomPair& truth,
                                          std::ostream& err) {
  if (pred.size() != truth.singles.size()) {
    throw std::runtime_error(id + ": " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(truth.singles.size()) + " ground-truth tracers");
  }
  std::vector<evaluation::MetricsRow> rows;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto& x = pred[k];
    const auto& y = truth.singles[k];
    evaluation::MetricsRow r;
    r.phantom_id = id;
    r.tracer = k;
    const std::string tag = id + " tracer " + std::to_string(k);
    r.psnr_db = evaluation::psnr(x, y);
    r.ssim = evaluation::ssim(x, y);
    r.nrmse = guarded_metric([&] { return evaluation::nrmse(x, y); }, tag + " nrmse", err);
    const auto lesion = truth.regions.find("lesion_" + std::to_string(k));
    const auto background = truth.regions.find("background_" + std::to_string(k));
    r.cr = r.cov = std::numeric_limits<double>::quiet_NaN();
    if (lesion != truth.regions.end() && background != truth.regions.end()) {
      r.cr = guarded_metric([&] { return evaluation::cr(x, lesion->second, background->second); },
                            tag + " cr", err);
    }
    if (background != truth.regions.end()) {
      r.cov = guarded_metric([&] { return evaluation::cov(x, background->second); },
                             tag + " cov", err);
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::string> write_separation(const fs::path& dir, const pipeline::Separation& s,
                                          const std::string& rel_prefix) {
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const Image& im) {
    write_tsr(dir / (name + ".tsr"), im);
    write_pgm16(dir / (name + ".pgm"), im);
    written.push_back(rel_prefix + name + ".tsr");
    written.push_back(rel_prefix + name + ".pgm");
  };
  for (std::size_t k = 0; k < s.fused.size(); ++k) {
    emit("tracer_" + std::to_string(k), s.fused[k]);
    emit("raw_" + std::to_string(k), s.raw[k]);
  }
  write_tsr(dir / "prior.tsr", s.prior);
  written.push_back(rel_prefix + "prior.tsr");
  texture::ByteGrid mask = s.dual_mask.grid;
  for (auto& v : mask.data) v = v ? 255 : 0;
  write_pgm8(dir / "dual_mask.pgm", mask);
  written.push_back(rel_prefix + "dual_mask.pgm");
  return written;
}

// ---- commands ----

void run_phantom(const PhantomOpts& o, Context& ctx) {
  require(o.out, "out");
  if (o.count == 0) throw UsageError("--count must be >= 1");
  evaluation::PhantomSpec spec;
  spec.size = o.size;
  spec.tracers = o.tracers;
  spec.blob_count = o.blobs;
  spec.ring_count = o.rings;
  spec.validate();
  std::vector<CorpusItem> items;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < o.count; ++i) {
    const auto s = phantom_seed(o.seed, i);
    seeds.push_back(s);
    ids.push_back(phantom_id(i));
    items.push_back({ids.back(), evaluation::gen_phantom(s, spec)});
  }
  const fs::path out(o.out);
  auto outputs = write_corpus(out, items);
  json m = run_manifest("phantom", o, o.seed, {}, outputs, ctx.elapsed(), nullptr);
  m["corpus"] = {{"ids", ids}, {"seeds", seeds}, {"spec", spec_to_json(spec)}};
  write_manifest(out / "manifest.json", m);
  ctx.out << "wrote " << o.count << " phantoms to " << out.string() << "\n";
}

template <typename T>
void train_impl(const TrainOpts& o, const std::vector<CorpusItem>& corpus, Context& ctx) {
  const auto& cfg = o.train;
  std::vector<evaluation::PhantomPair> pairs;
  for (const auto& item : corpus) pairs.push_back(item.pair);
  pipeline::Model<T> model(cfg.model);
  Adam<T> adam(model.parameters(), cfg.adam);
  const auto history = pipeline::train<T>(
      model, adam, pairs, cfg, [&](std::uint64_t s, const pipeline::StepLosses& l) {
        if (o.log_every > 0 && ((s + 1) % o.log_every == 0 || s + 1 == cfg.steps)) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "step %llu/%zu total %.6g dm %.6g tm %.6g\n",
                        static_cast<unsigned long long>(s + 1), cfg.steps, l.total, l.dm, l.tm);
          ctx.err << buf << std::flush;
        }
      });

  const fs::path out(o.out);
  std::ostringstream csv;
  csv << "step,total,dm,tm\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    csv << i << ',' << evaluation::format_metric(history[i].total) << ','
        << evaluation::format_metric(history[i].dm) << ','
        << evaluation::format_metric(history[i].tm) << '\n';
  }
  write_text(out / "loss.csv", csv.str());

  pipeline::CheckpointMeta meta;
  meta.train = cfg;
  meta.step = adam.steps_taken();
  const std::size_t tail = std::min(history.size(), pipeline::kLossTailLength);
  meta.loss_tail.assign(history.end() - static_cast<std::ptrdiff_t>(tail), history.end());
  std::vector<std::string> inputs;
  for (const auto& item : corpus) inputs.push_back((fs::path(o.data) / item.id).string());
  const json run = run_manifest("train", train_opts_json(o), cfg.seed, inputs,
                                {"manifest.json", "loss.csv", "params/", "opt/"},
                                ctx.elapsed(), nullptr);
  const std::string hash = pipeline::save_checkpoint(model, &adam, meta, out, run);
  ctx.out << "checkpoint " << out.string() << " sha256 " << hash << "\n";
}

void run_train(const TrainOpts& o, Context& ctx) {
  require(o.data, "data");
  require(o.out, "out");
  o.train.validate();
  const auto corpus = load_corpus(o.data);
  if (o.train.precision == pipeline::Precision::f32) {
    train_impl<float>(o, corpus, ctx);
  } else {
    train_impl<double>(o, corpus, ctx);
  }
}

template <typename T>
void separate_impl(const SeparateOpts& o, Context& ctx) {
  const auto ckpt = pipeline::load_checkpoint<T>(o.ckpt);
  const texture::TextureConfig tex{o.tau, o.alpha};
  tex.validate();
  const fs::path in(o.input), out(o.out);
  std::vector<std::string> outputs, inputs;
  if (fs::is_directory(in)) {
    const auto ids = corpus_ids(in);
    std::vector<std::vector<std::string>> written(ids.size());
    parallel_for(ids.size(), o.threads, [&](std::size_t i) {
      const Image dual = read_image(in / ids[i] / "dual.tsr");
      const auto sep = pipeline::separate(*ckpt.model, dual, tex, o.seed);
      written[i] = write_separation(out / ids[i], sep, ids[i] + "/");
    });
    for (std::size_t i = 0; i < ids.size(); ++i) {
      inputs.push_back((in / ids[i] / "dual.tsr").string());
      outputs.insert(outputs.end(), written[i].begin(), written[i].end());
    }
  } else {
    const auto sep = pipeline::separate(*ckpt.model, read_image(in), tex, o.seed);
    inputs.push_back(in.string());
    outputs = write_separation(out, sep, "");
  }
  write_manifest(out / "manifest.json", run_manifest("separate", o, o.seed, inputs, outputs,
                                                     ctx.elapsed(), ckpt.content_hash));
  ctx.out << "wrote separation to " << out.string() << "\n";
}

void run_separate(const SeparateOpts& o, Context& ctx) {
  require(o.ckpt, "ckpt");
  require(o.input, "input");
  require(o.out, "out");
  if (pipeline::checkpoint_precision(o.ckpt) == pipeline::Precision::f32) {
    separate_impl<float>(o, ctx);
  } else {
    separate_impl<double>(o, ctx);
  }
}

void run_evaluate(const EvaluateOpts& o, Context& ctx) {
  require(o.pred, "pred");
  require(o.truth, "truth");
  require(o.out, "out");
  const std::string prefix = output_prefix(o.which);
  const fs::path pred(o.pred), truth(o.truth);
  const fs::path regions = o.regions.empty() ? truth : fs::path(o.regions);

  // A single item directory or a corpus of them.
  std::vector<std::pair<std::string, fs::path>> items;
  if (fs::exists(truth / "dual.tsr")) {
    items.emplace_back(truth.filename().string(), fs::path{});
  } else {
    for (const auto& id : corpus_ids(truth)) items.emplace_back(id, fs::path(id));
  }
  evaluation::MetricsReport report;
  std::vector<std::string> inputs;
  for (const auto& [id, rel] : items) {
    evaluation::PhantomPair gt = load_item(truth / rel);
    const auto with_regions = load_item(regions / rel);
    gt.regions = with_regions.regions;
    std::vector<Image> p;
    for (std::size_t k = 0; k < gt.singles.size(); ++k) {
      const fs::path f = pred / rel / (prefix + "_" + std::to_string(k) + ".tsr");
      p.push_back(read_image(f));
      inputs.push_back(f.string());
    }
    const auto rows = score(id, p, gt, ctx.err);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(o.out, csv.str());
  write_manifest(sidecar(o.out), run_manifest("evaluate", o, nullptr, inputs,
                                              {fs::path(o.out).filename().string()},
                                              ctx.elapsed(), nullptr));
  ctx.out << "wrote " << report.rows.size() << " rows to " << o.out << "\n";
}

void run_lbp(const LbpOpts& o, Context& ctx) {
  require(o.input, "input");
  require(o.out, "out");
  const texture::TextureConfig tex{o.tau, 0.9};
  tex.validate();
  const Image im = read_image(o.input);
  const auto codes = texture::lbp_map(im);
  const auto mask = texture::texture_mask(codes, o.tau);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_pgm8(out / "lbp.pgm", codes);
  texture::ByteGrid view = mask.grid;
  for (auto& v : view.data) v = v ? 255 : 0;
  write_pgm8(out / "mask.pgm", view);
  write_tsr(out / "mask.tsr", mask.as_tensor<double>());
  json m = run_manifest("lbp", o, nullptr, {o.input}, {"lbp.pgm", "mask.pgm", "mask.tsr"},
                        ctx.elapsed(), nullptr);
  m["mask_density"] = mask.density();
  write_manifest(out / "manifest.json", m);
  ctx.out << "mask density " << evaluation::format_metric(mask.density()) << "\n";
}

template <typename T>
void sweep_impl(const SweepOpts& o, Context& ctx) {
  const auto ckpt = pipeline::load_checkpoint<T>(o.ckpt);
  const auto corpus = load_corpus(o.data);
  const bool fused = output_prefix(o.which) == "tracer";
  std::ostringstream csv;
  csv << "tau,psnr_db,ssim,nrmse,mask_density\n";
  for (int tau : o.taus) {
    const texture::TextureConfig tex{tau, o.alpha};
    tex.validate();
    std::vector<std::vector<evaluation::MetricsRow>> rows(corpus.size());
    std::vector<std::size_t> ones(corpus.size());
    parallel_for(corpus.size(), o.threads, [&](std::size_t i) {
      std::ostringstream quiet;
      const auto sep = pipeline::separate(*ckpt.model, corpus[i].pair.dual, tex, o.seed);
      rows[i] = score(corpus[i].id, fused ? sep.fused : sep.raw, corpus[i].pair, quiet);
      for (auto v : sep.dual_mask.grid.data) ones[i] += v ? 1 : 0;
    });
    evaluation::MetricsReport report;
    std::size_t total_ones = 0, pixels = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      report.rows.insert(report.rows.end(), rows[i].begin(), rows[i].end());
      total_ones += ones[i];
      pixels += corpus[i].pair.dual.size();
    }
    const auto mean = report.mean();
    csv << tau << ',' << evaluation::format_metric(mean.psnr_db) << ','
        << evaluation::format_metric(mean.ssim) << ','
        << evaluation::format_metric(mean.nrmse) << ','
        << evaluation::format_metric(static_cast<double>(total_ones) /
                                     static_cast<double>(pixels))
        << '\n';
  }
  write_text(o.out, csv.str());
  std::vector<std::string> inputs{o.ckpt};
  for (const auto& item : corpus) inputs.push_back((fs::path(o.data) / item.id).string());
  write_manifest(sidecar(o.out),
                 run_manifest("sweep-tau", o, o.seed, inputs,
                              {fs::path(o.out).filename().string()}, ctx.elapsed(),
                              ckpt.content_hash));
  ctx.out << "wrote " << o.taus.size() << " sweep rows to " << o.out << "\n";
}

void run_sweep(const SweepOpts& o, Context& ctx) {
  require(o.ckpt, "ckpt");
  require(o.data, "data");
  require(o.out, "out");
  if (o.taus.empty()) throw UsageError("--taus must list at least one threshold");
  for (int t : o.taus) {
    if (t < 0 || t > 255) throw UsageError("tau " + std::to_string(t) + " outside [0, 255]");
  }
  if (!fs::exists(fs::path(o.ckpt) / "manifest.json")) {
    throw std::runtime_error("missing checkpoint: " + o.ckpt);
  }
  if (pipeline::checkpoint_precision(o.ckpt) == pipeline::Precision::f32) {
    sweep_impl<float>(o, ctx);
  } else {
    sweep_impl<double>(o, ctx);
  }
}

// Runs a command from its fully resolved options.
void run_resolved(const std::string& command, const json& options, Context& ctx) {
  if (command == "phantom") return run_phantom(options.get<PhantomOpts>(), ctx);
  if (command == "train") return run_train(train_opts_from(options), ctx);
  if (command == "separate") return run_separate(options.get<SeparateOpts>(), ctx);
  if (command == "evaluate") return run_evaluate(options.get<EvaluateOpts>(), ctx);
  if (command == "lbp") return run_lbp(options.get<LbpOpts>(), ctx);
  if (command == "sweep-tau") return run_sweep(options.get<SweepOpts>(), ctx);
  throw UsageError("unknown command '" + command + "' in manifest");
}

// Flat `--config` file: keys are flag names; flags given on the command
// line win.
template <typename Opts>
Opts merge_config(const CLI::App* app, const Opts& from_cli, const std::string& config) {
  if (config.empty()) return from_cli;
  json resolved = from_cli;
  const json file = read_json(config);
  if (!file.is_object()) throw UsageError(config + ": expected a JSON object");
  for (const auto& [key, value] : file.items()) {
    if (!resolved.contains(key)) throw UsageError(config + ": unknown key '" + key + "'");
    const auto* opt = app->get_option_no_throw("--" + key);
    if (opt == nullptr || opt->count() == 0) resolved[key] = value;
  }
  try {
    return resolved.get<Opts>();
  } catch (const json::exception& e) {
    throw UsageError(config + ": " + e.what());
  }
}

const std::set<std::string>& command_names() {
  static const std::set<std::string> names{"phantom", "train",    "separate",
                                           "evaluate", "lbp", "sweep-tau"};
  return names;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};

  CLI::App app{"Dual-tracer PET separation with latent priors and texture masks", "mscdt"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(0, 1);
  app.fallthrough(false);
  std::string replay, replay_out;
  app.add_option("--replay", replay, "Re-run the command recorded in a manifest.json");
  app.add_option("--replay-out", replay_out, "Output path used instead of the recorded one");

  PhantomOpts phantom;
  std::string phantom_cfg;
  auto* ph = app.add_subcommand("phantom", "Generate a synthetic dual-tracer phantom corpus");
  ph->add_option("--config", phantom_cfg, "JSON file of flag values");
  ph->add_option("--seed", phantom.seed, "Corpus seed")->capture_default_str();
  ph->add_option("--count", phantom.count, "Number of phantoms")->capture_default_str();
  ph->add_option("--size", phantom.size, "Image side length")->capture_default_str();
  ph->add_option("--tracers", phantom.tracers, "Tracers per phantom")->capture_default_str();
  ph->add_option("--blobs", phantom.blobs, "Blob count of blob tracers")->capture_default_str();
  ph->add_option("--rings", phantom.rings, "Ring count of ring tracers")->capture_default_str();
  ph->add_option("--out", phantom.out, "Output directory");

  TrainOverrides tov;
  TrainOpts train;
  auto* tr = app.add_subcommand("train", "Train the joint model on a phantom corpus");
  tr->add_option("--config", tov.config, "Training config JSON (nested, see README)");
  tr->add_option("--data", train.data, "Corpus directory");
  tr->add_option("--out", train.out, "Checkpoint directory");
  tr->add_option("--steps", tov.steps, "Adam steps");
  tr->add_option("--batch", tov.batch, "Phantoms per step");
  tr->add_option("--lr", tov.lr, "Learning rate");
  tr->add_option("--seed", tov.seed, "Training noise seed");
  tr->add_option("--threads", tov.threads, "Worker threads for the batch (fixed-order reduction)");
  tr->add_option("--precision", tov.precision, "f32 or f64");
  tr->add_option("--tau", tov.tau, "Texture threshold for the training masks");
  tr->add_option("--alpha", tov.alpha, "Fusion weight stored with the checkpoint");
  tr->add_option("--teacher-forcing", tov.teacher_forcing,
                 "Fraction of steps that feed the encoded prior to the transformer");
  tr->add_option("--log-every", train.log_every, "Progress line interval (0 = silent)")
      ->capture_default_str();

  SeparateOpts sep;
  std::string sep_cfg;
  auto* sp = app.add_subcommand("separate", "Separate a dual-tracer image or corpus");
  sp->add_option("--config", sep_cfg, "JSON file of flag values");
  sp->add_option("--ckpt", sep.ckpt, "Checkpoint directory");
  sp->add_option("--input", sep.input, "Dual image (.tsr/.pgm) or corpus directory");
  sp->add_option("--out", sep.out, "Output directory");
  sp->add_option("--seed", sep.seed, "Diffusion start-noise seed")->capture_default_str();
  sp->add_option("--alpha", sep.alpha, "Fusion weight of the network output")->capture_default_str();
  sp->add_option("--tau", sep.tau, "Texture threshold")->capture_default_str();
  sp->add_option("--threads", sep.threads, "Worker threads across corpus items")
      ->capture_default_str();

  EvaluateOpts ev;
  std::string ev_cfg;
  auto* evc = app.add_subcommand("evaluate", "Score separated images against ground truth");
  evc->add_option("--config", ev_cfg, "JSON file of flag values");
  evc->add_option("--pred", ev.pred, "Separation output directory");
  evc->add_option("--truth", ev.truth, "Ground-truth corpus or item directory");
  evc->add_option("--regions", ev.regions, "Region-mask directory (defaults to --truth)");
  evc->add_option("--out", ev.out, "Metrics CSV path");
  evc->add_option("--which", ev.which, "fused or raw outputs")->capture_default_str();

  LbpOpts lbp;
  std::string lbp_cfg;
  auto* lb = app.add_subcommand("lbp", "Write the LBP code map and texture mask of an image");
  lb->add_option("--config", lbp_cfg, "JSON file of flag values");
  lb->add_option("--input", lbp.input, "Image (.tsr/.pgm)");
  lb->add_option("--tau", lbp.tau, "Texture threshold")->capture_default_str();
  lb->add_option("--out", lbp.out, "Output directory");

  SweepOpts sw;
  std::string sw_cfg;
  auto* swc = app.add_subcommand("sweep-tau", "Separate and score a corpus at several thresholds");
  swc->add_option("--config", sw_cfg, "JSON file of flag values");
  swc->add_option("--ckpt", sw.ckpt, "Checkpoint directory");
  swc->add_option("--data", sw.data, "Corpus directory");
  swc->add_option("--taus", sw.taus, "Comma-separated thresholds")->delimiter(',')
      ->capture_default_str();
  swc->add_option("--out", sw.out, "Sweep CSV path");
  swc->add_option("--seed", sw.seed, "Diffusion start-noise seed")->capture_default_str();
  swc->add_option("--alpha", sw.alpha, "Fusion weight")->capture_default_str();
  swc->add_option("--which", sw.which, "fused or raw outputs")->capture_default_str();
  swc->add_option("--threads", sw.threads, "Worker threads across corpus items")
      ->capture_default_str();

  if (argc > 1 && argv[1][0] != '-' && !command_names().contains(argv[1])) {
    err << "error: unknown subcommand '" << argv[1] << "'\n"
        << "run 'mscdt --help' for the list of subcommands\n";
    return 2;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!replay.empty()) {
      if (!app.get_subcommands().empty()) throw UsageError("--replay takes no subcommand");
      json m = read_json(replay);
      if (m.contains("run")) m = m.at("run");
      if (!m.contains("command") || !m.contains("options")) {
        throw UsageError(replay + " is not a run manifest");
      }
      json options = m.at("options");
      if (!replay_out.empty()) options["out"] = replay_out;
      run_resolved(m.at("command"), options, ctx);
      return 0;
    }
    if (ph->parsed()) {
      run_phantom(merge_config(ph, phantom, phantom_cfg), ctx);
    } else if (tr->parsed()) {
      pipeline::TrainConfig& cfg = train.train;
      if (!tov.config.empty()) {
        try {
          pipeline::from_json(read_json(tov.config), cfg);
        } catch (const json::exception& e) {
          throw UsageError(tov.config + ": " + e.what());
        }
      }
      if (tov.steps) cfg.steps = *tov.steps;
      if (tov.batch) cfg.batch = *tov.batch;
      if (tov.lr) cfg.adam.learning_rate = *tov.lr;
      if (tov.seed) cfg.seed = *tov.seed;
      if (tov.threads) cfg.threads = *tov.threads;
      if (tov.precision) cfg.precision = pipeline::parse_precision(*tov.precision);
      if (tov.tau) cfg.texture.tau = *tov.tau;
      if (tov.alpha) cfg.texture.alpha = *tov.alpha;
      if (tov.teacher_forcing) cfg.teacher_forcing = *tov.teacher_forcing;
      run_train(train, ctx);
    } else if (sp->parsed()) {
      run_separate(merge_config(sp, sep, sep_cfg), ctx);
    } else if (evc->parsed()) {
      run_evaluate(merge_config(evc, ev, ev_cfg), ctx);
    } else if (lb->parsed()) {
      run_lbp(merge_config(lb, lbp, lbp_cfg), ctx);
    } else if (swc->parsed()) {
      run_sweep(merge_config(swc, sw, sw_cfg), ctx);
    } else {
      err << app.help();
      return 2;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mscdt::cli
