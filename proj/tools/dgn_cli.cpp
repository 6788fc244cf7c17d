#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "dgn/encoders.hpp"
#include "dgn/errors.hpp"
#include "dgn/gradcheck.hpp"
#include "dgn/labeler.hpp"
#include "dgn/run_config.hpp"
#include "dgn/synthetic.hpp"
#include "dgn/training.hpp"

namespace fs = std::filesystem;
using namespace dgn;

namespace {

enum ExitCode { kOk = 0, kIo = 2, kData = 3, kNumerical = 4 };

// Options every pipeline command accepts.
struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "INI config file");
    cmd->add_option("--set", overrides, "Override a config key, e.g. --set model.hidden=32");
    cmd->add_option("--seed", seed, "Seed shared by every stage");
  }

  // File values first, then --set, then dedicated flags via `extra`.
  RunConfig resolve(const std::vector<std::string>& extra = {}) const {
    RunConfig c = config_file.empty() ? RunConfig{} : RunConfig::load(config_file);
    c.apply(overrides);
    c.apply(extra);
    if (seed) c.seed = *seed;
    c.resolve();
    return c;
  }
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing file '" + p.string() + "'");
}

fs::path parent_or_cwd(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

void ensure_parent(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  ensure_parent(path);
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

template <class T>
std::string flag(const char* key, const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_convertible_v<T, std::string>) return std::string(key) + "=" + *v;
  else return std::string(key) + "=" + std::to_string(*v);
}

std::vector<std::string> flags(std::initializer_list<std::string> items) {
  std::vector<std::string> out;
  for (auto& s : items)
    if (!s.empty()) out.push_back(s);
  return out;
}

// Sets the image input form from the first record.
void match_image_form(ModelConfig& m, const corpus::Corpus& data) {
  if (data.empty()) throw DataError("corpus is empty");
  const auto& r = data.front();
  m.grid_images = r.has_grid();
  if (m.grid_images) {
    m.grid_side = r.image_grid.size();
  } else {
    m.image_dim = r.image_feat.size();
  }
}

std::span<const corpus::RecipeRecord> select_split(const corpus::Corpus& data, const std::string& split,
                                                   double val_fraction) {
  if (split == "all") return data;
  const std::size_t n = corpus::train_count(data.size(), val_fraction);
  if (split == "train") return std::span(data).first(n);
  if (split == "val") return std::span(data).subspan(n);
  throw DataError("split must be all, train or val, got '" + split + "'");
}

int cmd_synth(const Common& common, const std::string& out, std::optional<std::size_t> n,
              std::optional<std::size_t> phase_types, bool grid) {
  RunConfig c = common.resolve(flags({flag("synth.recipes", n), flag("synth.phase_types", phase_types),
                                      grid ? "synth.grid_images=true" : ""}));
  const auto data = synthetic::generate(c.synth);
  ensure_parent(out);
  corpus::save_jsonl(out, data);
  open_out(out + ".manifest") << synthetic::manifest(c.synth, data);
  c.save_snapshot(parent_or_cwd(out));
  spdlog::info("wrote {} recipes to {}", data.size(), out);
  return kOk;
}

int cmd_label(const Common& common, const std::string& corpus_path, const std::string& out_dir,
              std::optional<std::size_t> k, const std::string& lexicon_path) {
  RunConfig c = common.resolve(flags({flag("labeler.k", k)}));
  require_file(corpus_path);
  auto data = corpus::load_jsonl(corpus_path);
  const auto lexicon = lexicon_path.empty() ? labeler::synthetic_lexicon()
                                            : labeler::VerbLexicon::load(lexicon_path);
  const std::size_t n_train = corpus::train_count(data.size(), c.val_fraction);
  const auto state = labeler::fit_and_label(data, n_train, lexicon, c.labeler);

  const fs::path dir(out_dir);
  c.save_snapshot(dir);
  corpus::save_jsonl(dir / "labeled.jsonl", data);
  corpus::save_labels(dir / "labels.jsonl", data);
  labeler::save_centroids(dir / "centroids.json", state);

  std::vector<int> labels, planted;
  for (const auto& r : data) {
    if (r.planted.empty()) continue;
    labels.insert(labels.end(), r.pseudo_labels.begin(), r.pseudo_labels.end());
    planted.insert(planted.end(), r.planted.begin(), r.planted.end());
  }
  nlohmann::ordered_json summary;
  summary["k"] = c.labeler.k;
  summary["iterations"] = state.model.iterations;
  summary["sse"] = state.model.sse_history.empty() ? 0.0 : state.model.sse_history.back();
  if (!planted.empty()) summary["purity"] = labeler::best_permutation_accuracy(labels, planted);
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& corpus_path, const std::string& labels_path,
              const std::string& out_dir, const std::string& resume, std::optional<std::string> kind,
              std::optional<std::string> fusion, std::optional<std::size_t> generators,
              std::optional<std::size_t> epochs) {
  RunConfig c = common.resolve(flags({flag("model.kind", kind), flag("model.fusion", fusion),
                                      flag("model.generators", generators),
                                      flag("train.epochs", epochs)}));
  require_file(corpus_path);
  auto data = corpus::load_jsonl(corpus_path);
  if (!labels_path.empty()) {
    require_file(labels_path);
    corpus::load_labels(labels_path, data);
  }
  const std::size_t n_train = corpus::train_count(data.size(), c.val_fraction);
  if (n_train == 0) throw DataError("training split is empty");

  std::unique_ptr<Trainer> trainer;
  if (!resume.empty()) {
    require_file(resume);
    trainer = load_checkpoint(resume);
  } else {
    match_image_form(c.train.model, data);
    const corpus::Corpus train_part(data.begin(), data.begin() + static_cast<long>(n_train));
    trainer = std::make_unique<Trainer>(c.train, corpus::Vocabulary::build(train_part));
  }
  const auto encoded = encode_corpus(data, trainer->vocab(), trainer->config().model);
  std::span<const EncodedRecipe> train(encoded.data(), n_train);
  std::span<const EncodedRecipe> val(encoded.data() + n_train, encoded.size() - n_train);

  const fs::path dir(out_dir);
  c.train = trainer->config();
  c.save_snapshot(dir);
  spdlog::info("{} model, {} parameters, vocabulary {}, {} train / {} val recipes",
               to_string(c.train.model.kind), trainer->model().store().total_values(),
               trainer->vocab().size(), train.size(), val.size());
  auto log = open_out(dir / "metrics.jsonl", resume.empty() ? std::ios::out : std::ios::app);
  trainer->fit(train, val, [&](const EpochMetrics& m) { log << m.to_json() << "\n" << std::flush; });
  save_checkpoint(dir / "checkpoint.dgnc", *trainer);
  return kOk;
}

int cmd_generate(const Common& common, const std::string& ckpt, const std::string& input,
                 const std::string& out, const std::string& split) {
  RunConfig c = common.resolve();
  require_file(ckpt);
  require_file(input);
  const auto trainer = load_checkpoint(ckpt);
  const auto data = corpus::load_jsonl(input);
  const auto records = select_split(data, split, c.val_fraction);
  std::vector<EncodedRecipe> encoded;
  for (const auto& r : records) encoded.push_back(encode_recipe(r, trainer->vocab(), trainer->config().model));
  const auto gens = generate_all(trainer->model(), encoded, thread_count());

  auto file = open_out(out);
  for (std::size_t i = 0; i < gens.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = records[i].id;
    j["structure"] = gens[i].structure;
    j["text"] = trainer->vocab().decode(gens[i].tokens);
    file << j.dump() << "\n";
  }
  c.train = trainer->config();
  c.save_snapshot(parent_or_cwd(out));
  spdlog::info("wrote {} generations to {}", gens.size(), out);
  return kOk;
}

int cmd_eval(const Common& common, const std::string& ckpt, const std::string& corpus_path,
             const std::string& labels_path, const std::string& out, const std::string& split) {
  RunConfig c = common.resolve();
  require_file(ckpt);
  require_file(corpus_path);
  const auto trainer = load_checkpoint(ckpt);
  auto data = corpus::load_jsonl(corpus_path);
  if (!labels_path.empty()) {
    require_file(labels_path);
    corpus::load_labels(labels_path, data);
  }
  const auto records = select_split(data, split, c.val_fraction);
  std::vector<EncodedRecipe> encoded;
  for (const auto& r : records) encoded.push_back(encode_recipe(r, trainer->vocab(), trainer->config().model));
  const auto report = evaluate_model(trainer->model(), trainer->vocab(), records, encoded,
                                     trainer->config().weights, trainer->config().batch_size,
                                     thread_count());
  std::cout << report.to_json() << "\n";
  if (!out.empty()) {
    open_out(out) << report.to_json() << "\n";
    c.train = trainer->config();
    c.save_snapshot(parent_or_cwd(out));
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  double worst = 0, worst_raw = 0;
  for (const auto& r : gradcheck::run_suite(seed)) {
    std::printf("%-26s coords %5zu  rel-err %.3e  (floor %.1e; fixed floor %.3e; abs %.1e)\n",
                r.name.c_str(), r.coordinates, r.max_rel_error, r.floor, r.max_raw_rel_error,
                r.max_abs_error);
    worst = std::max(worst, r.max_rel_error);
    worst_raw = std::max(worst_raw, r.max_raw_rel_error);
  }
  std::printf("max rel-err %.3e (tolerance %.0e; %.3e with the fixed %.0e floor)\n", worst,
              gradcheck::kTolerance, worst_raw, gradcheck::kMinScale);
  return worst < gradcheck::kTolerance ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposed recipe generation: corpus synthesis, labeling, training, generation and evaluation"};
  app.require_subcommand(1);
  spdlog::set_default_logger(spdlog::stderr_color_st("dgn"));

  Common common;

  auto* synth = app.add_subcommand("synth", "Write a synthetic planted corpus");
  std::string synth_out;
  std::optional<std::size_t> synth_n, phase_types;
  bool grid = false;
  synth->add_option("--out", synth_out, "Output JSONL")->required();
  synth->add_option("--n", synth_n, "Number of recipes");
  synth->add_option("--phase-types", phase_types, "Planted phase types (1-3)");
  synth->add_flag("--grid", grid, "Emit image grids instead of feature vectors");
  common.add_to(synth);

  auto* label = app.add_subcommand("label", "Cluster phases into pseudo labels");
  std::string label_corpus, label_out, lexicon;
  std::optional<std::size_t> k;
  label->add_option("--corpus", label_corpus, "Input JSONL")->required();
  label->add_option("--out", label_out, "Output directory")->required();
  label->add_option("--k", k, "Cluster count");
  label->add_option("--lexicon", lexicon, "Verb lexicon file, one verb per line");
  common.add_to(label);

  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_corpus, train_labels, train_out, resume;
  std::optional<std::string> kind, fusion;
  std::optional<std::size_t> generators, epochs;
  train->add_option("--corpus", train_corpus, "Labeled JSONL")->required();
  train->add_option("--labels", train_labels, "Label dump to attach");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--model", kind, "dgn or baseline");
  train->add_option("--fusion", fusion, "cat or attn");
  train->add_option("--generators", generators, "Number of sub-generators");
  train->add_option("--epochs", epochs, "Epoch count");
  common.add_to(train);

  auto* generate = app.add_subcommand("generate", "Greedy generation from a checkpoint");
  std::string gen_ckpt, gen_input, gen_out, gen_split = "all";
  generate->add_option("--ckpt", gen_ckpt, "Checkpoint")->required();
  generate->add_option("--input", gen_input, "Input JSONL")->required();
  generate->add_option("--out", gen_out, "Output JSONL")->required();
  generate->add_option("--split", gen_split, "all, train or val");
  common.add_to(generate);

  auto* eval = app.add_subcommand("eval", "Perplexity, BLEU and ROUGE-L of a checkpoint");
  std::string eval_ckpt, eval_corpus, eval_labels, eval_out, eval_split = "all";
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--corpus", eval_corpus, "Labeled JSONL")->required();
  eval->add_option("--labels", eval_labels, "Label dump to attach");
  eval->add_option("--out", eval_out, "Report JSON");
  eval->add_option("--split", eval_split, "all, train or val");
  common.add_to(eval);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 42;
  gradcheck->add_option("--seed", gc_seed, "Seed for inputs and parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kData;
  }

  try {
    if (*synth) return cmd_synth(common, synth_out, synth_n, phase_types, grid);
    if (*label) return cmd_label(common, label_corpus, label_out, k, lexicon);
    if (*train)
      return cmd_train(common, train_corpus, train_labels, train_out, resume, kind, fusion, generators,
                       epochs);
    if (*generate) return cmd_generate(common, gen_ckpt, gen_input, gen_out, gen_split);
    if (*eval) return cmd_eval(common, eval_ckpt, eval_corpus, eval_labels, eval_out, eval_split);
    if (*gradcheck) return cmd_gradcheck(gc_seed);
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return kIo;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kNumerical;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kIo;
  }
  return kOk;
}
