#include "dgn/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dgn/errors.hpp"
#include "dgn/metrics.hpp"

namespace dgn {

Tensor LossBundle::total() const {
  Tensor out;
  auto term = [&out](const Tensor& t, double w) {
    if (!t.defined()) return;
    Tensor scaled = scale(t, static_cast<Real>(w));
    out = out.defined() ? add(out, scaled) : scaled;
  };
  term(pre, weights.pre);
  term(gen, weights.gen);
  term(pos, weights.pos);
  if (!out.defined()) throw DataError("loss bundle holds no terms");
  return out;
}

double total_loss(double pre, double gen, double pos, const LossWeights& w) {
  return w.pre * pre + w.gen * gen + w.pos * pos;
}

LossBundle make_bundle(const LossTerms& terms, const LossWeights& w) {
  if (terms.recipes == 0) throw DataError("loss terms cover no recipes");
  const Real inv = Real(1) / static_cast<Real>(terms.recipes);
  auto mean = [inv](const Tensor& t) { return t.defined() ? scale(t, inv) : Tensor(); };
  return {mean(terms.pre), mean(terms.gen), mean(terms.pos), w};
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw DataError("invalid train config: " + what);
  };
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(decay > 0 && decay <= 1, "decay must lie in (0, 1]");
  require(batch_size > 0, "batch_size must be positive");
  require(clip_norm > 0, "clip_norm must be positive");
  require(weights.pre >= 0 && weights.gen >= 0 && weights.pos >= 0, "loss weights must be >= 0");
  model.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return learning_rate * std::pow(decay, static_cast<double>(epoch));
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["decay"] = decay;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["clip_norm"] = clip_norm;
  j["keep_best"] = keep_best;
  j["patience"] = patience;
  j["lambda_pre"] = weights.pre;
  j["lambda_gen"] = weights.gen;
  j["lambda_pos"] = weights.pos;
  j["model"] = nlohmann::ordered_json::parse(model.to_json());
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.learning_rate = j.at("learning_rate");
    c.decay = j.at("decay");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.clip_norm = j.at("clip_norm");
    c.keep_best = j.at("keep_best");
    c.patience = j.at("patience");
    c.weights = {j.at("lambda_pre"), j.at("lambda_gen"), j.at("lambda_pos")};
    c.model = ModelConfig::from_json(j.at("model").dump());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
  return c;
}

Adam::Adam(const ParameterStore& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(store.zero_grads()), v_(store.zero_grads()) {}

void Adam::step(ParameterStore& store, const GradBuffer& grads, double lr) {
  if (grads.size() != store.size() || m_.size() != store.size()) {
    throw ShapeError("optimizer state does not match the parameter store");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].frozen) continue;
    for (Real g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in parameter '" + store[i].name + "'");
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (p.frozen) continue;
    auto& value = *p.value;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = static_cast<Real>(beta1_ * m[j] + (1 - beta1_) * g[j]);
      v[j] = static_cast<Real>(beta2_ * v[j] + (1 - beta2_) * g[j] * g[j]);
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      value[j] = static_cast<Real>(value[j] - lr * m_hat / (std::sqrt(v_hat) + eps_));
    }
  }
}

double clip_global_norm(const ParameterStore& store, GradBuffer& grads, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (store[i].frozen) continue;
    for (Real g : grads[i]) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (Real& x : g) x = static_cast<Real>(x * f);
  }
  return norm;
}

double TeacherForcedEval::mean_loss() const {
  return recipes ? loss_sum / static_cast<double>(recipes) : 0.0;
}

double TeacherForcedEval::perplexity() const { return metrics::perplexity(nll_sum, tokens); }

namespace {

std::vector<const EncodedRecipe*> pointers(std::span<const EncodedRecipe> data) {
  std::vector<const EncodedRecipe*> out;
  out.reserve(data.size());
  for (const auto& r : data) out.push_back(&r);
  return out;
}

double value_of(const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

}  // namespace

TeacherForcedEval evaluate_teacher_forced(const RecipeModel& model,
                                          std::span<const EncodedRecipe> data,
                                          const LossWeights& weights, std::size_t batch_size) {
  if (data.empty()) throw DataError("evaluation set is empty");
  const auto all = pointers(data);
  TeacherForcedEval e;
  for (std::size_t b = 0; b < all.size(); b += batch_size) {
    const std::span<const EncodedRecipe* const> batch(all.data() + b,
                                                      std::min(batch_size, all.size() - b));
    Session s(model.store(), false);
    const LossTerms t = model.losses(s, batch);
    e.loss_sum += total_loss(value_of(t.pre), value_of(t.gen), value_of(t.pos), weights);
    e.nll_sum += value_of(t.gen);
    e.tokens += t.tokens;
    e.recipes += t.recipes;
  }
  return e;
}

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["val_ppl"] = val_ppl;
  j["lr"] = lr;
  return j.dump();
}

Trainer::Trainer(const TrainConfig& config, const corpus::Vocabulary& vocab)
    : config_(config), vocab_(vocab), rng_(config.seed + 1) {
  config_.model.vocab_size = vocab_.size();
  config_.validate();
  model_ = make_model(config_.model, config_.seed);
  adam_ = Adam(model_->store());
}

double Trainer::step(std::span<const EncodedRecipe* const> batch, double lr) {
  ParameterStore& store = model_->store();
  Session s(store, true);
  if (config_.model.dropout > 0) s.enable_dropout(config_.model.dropout, rng_);
  const LossBundle bundle = make_bundle(model_->losses(s, batch), config_.weights);
  const Tensor loss = bundle.total();
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
  loss.backward();
  GradBuffer grads = store.zero_grads();
  s.accumulate_into(grads);
  clip_global_norm(store, grads, config_.clip_norm);
  adam_.step(store, grads, lr);
  return value;
}

EpochMetrics Trainer::run_epoch(std::span<const EncodedRecipe> train,
                                std::span<const EncodedRecipe> val) {
  if (train.empty()) throw DataError("training set is empty");
  auto order = pointers(train);
  rng_.shuffle(order);
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = config_.lr_at(epoch_);
  double weighted = 0;
  for (std::size_t b = 0; b < order.size(); b += config_.batch_size) {
    const std::size_t n = std::min(config_.batch_size, order.size() - b);
    weighted += step({order.data() + b, n}, m.lr) * static_cast<double>(n);
  }
  m.train_loss = weighted / static_cast<double>(order.size());
  if (!val.empty()) {
    const auto e = evaluate_teacher_forced(*model_, val, config_.weights, config_.batch_size);
    m.val_loss = e.mean_loss();
    m.val_ppl = e.perplexity();
  }
  ++epoch_;
  return m;
}

void Trainer::fit(std::span<const EncodedRecipe> train, std::span<const EncodedRecipe> val,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  ParameterStore& store = model_->store();
  std::vector<std::vector<Real>> best;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  while (epoch_ < config_.epochs) {
    const EpochMetrics m = run_epoch(train, val);
    spdlog::info("epoch {} train_loss {:.4f} val_loss {:.4f} val_ppl {:.4f} lr {:.6f}", m.epoch,
                 m.train_loss, m.val_loss, m.val_ppl, m.lr);
    if (on_epoch) on_epoch(m);
    if (val.empty()) continue;
    if (m.val_ppl < best_ppl) {
      best_ppl = m.val_ppl;
      best_epoch_ = static_cast<long>(m.epoch);
      stale = 0;
      if (config_.keep_best) {
        best.resize(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) best[i] = *store[i].value;
      }
    } else if (config_.patience > 0 && ++stale >= config_.patience) {
      spdlog::info("no validation improvement for {} epochs; stopping", stale);
      break;
    }
  }
  if (config_.keep_best && !best.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) *store[i].value = best[i];
    spdlog::info("kept parameters of epoch {} (val_ppl {:.4f})", best_epoch_, best_ppl);
  }
}

// Checkpoint serialization. Integers and doubles are written little-endian
// regardless of the host byte order.
namespace {

constexpr char kMagic[4] = {'D', 'G', 'N', 'C'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write checkpoint '" + path.string() + "'");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }

 private:
  void le(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b, static_cast<std::size_t>(n));
  }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot read checkpoint '" + path.string() + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw DataError("checkpoint '" + path_.string() + "' is truncated");
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    std::string s(u32(), '\0');
    bytes(s.data(), s.size());
    return s;
  }

 private:
  std::uint64_t le(int n) {
    unsigned char b[8];
    bytes(b, static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_table(Writer& w, const ParameterStore& store, const GradBuffer* values) {
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) w.u64(d);
    const auto& v = values ? (*values)[i] : *p.value;
    for (Real x : v) w.f64(static_cast<double>(x));
  }
}

void read_table(Reader& r, const ParameterStore& store, const std::string& what,
                const std::function<std::vector<Real>&(std::size_t)>& target) {
  const std::uint32_t count = r.u32();
  if (count != store.size()) {
    throw DataError("checkpoint " + what + " holds " + std::to_string(count) +
                    " parameters, model expects " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (name != store[i].name) {
      throw DataError("checkpoint " + what + " parameter " + std::to_string(i) + " is '" + name +
                      "', model expects '" + store[i].name + "'");
    }
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != store[i].shape) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) +
                      ", model expects " + shape_string(store[i].shape));
    }
    auto& dst = target(i);
    for (Real& x : dst) x = static_cast<Real>(r.f64());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  nlohmann::ordered_json config;
  config["train"] = nlohmann::ordered_json::parse(trainer.config().to_json());
  config["vocab"] = trainer.vocab().tokens();
  w.str(config.dump());
  const ParameterStore& store = trainer.model().store();
  write_table(w, store, nullptr);
  write_table(w, store, &trainer.optimizer().first_moment());
  write_table(w, store, &trainer.optimizer().second_moment());
  w.u64(trainer.epoch());
  w.u64(trainer.optimizer().steps());
  w.str(trainer.rng().state());
  w.finish(path);
}

std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  TrainConfig config;
  std::vector<std::string> tokens;
  try {
    const auto j = nlohmann::json::parse(r.str());
    config = TrainConfig::from_json(j.at("train").dump());
    tokens = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  auto trainer = std::make_unique<Trainer>(config, corpus::Vocabulary::from_tokens(tokens));
  ParameterStore& store = trainer->model().store();
  read_table(r, store, "parameters", [&](std::size_t i) -> std::vector<Real>& { return *store[i].value; });
  read_table(r, store, "first moments",
             [&](std::size_t i) -> std::vector<Real>& { return trainer->optimizer().first_moment()[i]; });
  read_table(r, store, "second moments",
             [&](std::size_t i) -> std::vector<Real>& { return trainer->optimizer().second_moment()[i]; });
  trainer->set_epoch(r.u64());
  trainer->optimizer().set_steps(r.u64());
  trainer->rng().restore(r.str());
  return trainer;
}

std::vector<Generation> generate_all(const RecipeModel& model, std::span<const EncodedRecipe> data,
                                     std::size_t threads) {
  std::vector<Generation> out(data.size());
  threads = std::max<std::size_t>(1, std::min(threads, data.size()));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t first) {
    try {
      for (std::size_t i = first; i < data.size(); i += threads) out[i] = model.generate(data[i]);
    } catch (...) {
      errors[first] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

metrics::Tokens reference_tokens(const corpus::RecipeRecord& record) {
  metrics::Tokens out;
  for (const auto& step : record.steps) {
    auto t = corpus::tokenize(step);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

metrics::Tokens generated_tokens(const Generation& g, const corpus::Vocabulary& vocab) {
  metrics::Tokens out;
  for (int id : g.tokens)
    if (id >= static_cast<int>(corpus::Vocabulary::kReserved)) out.push_back(vocab.token(id));
  return out;
}

metrics::EvalReport evaluate_model(const RecipeModel& model, const corpus::Vocabulary& vocab,
                                   std::span<const corpus::RecipeRecord> records,
                                   std::span<const EncodedRecipe> encoded, const LossWeights& weights,
                                   std::size_t batch_size, std::size_t threads,
                                   std::vector<Generation>* generations) {
  if (records.size() != encoded.size()) throw DataError("records and encodings differ in length");
  if (records.empty()) throw DataError("nothing to evaluate");
  const TeacherForcedEval tf = evaluate_teacher_forced(model, encoded, weights, batch_size);
  std::vector<Generation> gens = generate_all(model, encoded, threads);
  std::vector<metrics::Tokens> hyps, refs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    hyps.push_back(generated_tokens(gens[i], vocab));
    refs.push_back(reference_tokens(records[i]));
  }
  const auto stats = metrics::corpus_stats(hyps);
  metrics::EvalReport report{tf.perplexity(), metrics::bleu(hyps, refs), metrics::rouge_l(hyps, refs),
                             stats.avg_length, stats.vocab_size};
  if (generations) *generations = std::move(gens);
  return report;
}

std::size_t thread_count() {
  if (const char* env = std::getenv("DGN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    spdlog::warn("ignoring DGN_THREADS='{}'", env);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace dgn
