#include "dgn/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dgn/errors.hpp"

namespace dgn {

namespace {

namespace pt = boost::property_tree;

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw DataError("config key '" + std::string(key) + "': expected true or false, got '" +
                  std::string(text) + "'");
}

std::string format(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}
std::string format(std::size_t v) { return std::to_string(v); }
static_assert(std::is_same_v<std::uint64_t, std::size_t>);
std::string format(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view text)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(T RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view key, std::string_view text) {
            if constexpr (std::is_same_v<T, bool>) c.*member = parse_bool(key, text);
            else c.*member = parse_number<T>(key, text);
          },
          [member](const RunConfig& c) { return format(c.*member); }};
}

// Member of a nested struct, reached through `outer`.
template <class Outer, class T>
Field field(Outer RunConfig::*outer, T Outer::*member) {
  return {[outer, member](RunConfig& c, std::string_view key, std::string_view text) {
            if constexpr (std::is_same_v<T, bool>) (c.*outer).*member = parse_bool(key, text);
            else (c.*outer).*member = parse_number<T>(key, text);
          },
          [outer, member](const RunConfig& c) { return format((c.*outer).*member); }};
}

template <class T>
Field model_field(T ModelConfig::*member) {
  return {[member](RunConfig& c, std::string_view key, std::string_view text) {
            if constexpr (std::is_same_v<T, bool>) c.train.model.*member = parse_bool(key, text);
            else c.train.model.*member = parse_number<T>(key, text);
          },
          [member](const RunConfig& c) { return format(c.train.model.*member); }};
}

template <class T>
Field weight_field(T LossWeights::*member) {
  return {[member](RunConfig& c, std::string_view key, std::string_view text) {
            c.train.weights.*member = parse_number<T>(key, text);
          },
          [member](const RunConfig& c) { return format(c.train.weights.*member); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = [] {
    std::map<std::string, Field, std::less<>> t;
    t["run.seed"] = field(&RunConfig::seed);
    t["run.val_fraction"] = field(&RunConfig::val_fraction);

    using S = synthetic::SyntheticConfig;
    t["synth.recipes"] = field(&RunConfig::synth, &S::recipes);
    t["synth.phase_types"] = field(&RunConfig::synth, &S::phase_types);
    t["synth.image_dim"] = field(&RunConfig::synth, &S::image_dim);
    t["synth.grid_images"] = field(&RunConfig::synth, &S::grid_images);
    t["synth.noise"] = field(&RunConfig::synth, &S::noise);
    t["synth.min_steps"] = field(&RunConfig::synth, &S::min_steps);
    t["synth.max_steps"] = field(&RunConfig::synth, &S::max_steps);
    t["synth.min_ingredients"] = field(&RunConfig::synth, &S::min_ingredients);
    t["synth.max_ingredients"] = field(&RunConfig::synth, &S::max_ingredients);
    t["synth.dominant_probability"] = field(&RunConfig::synth, &S::dominant_probability);
    t["synth.second_ingredient_probability"] =
        field(&RunConfig::synth, &S::second_ingredient_probability);

    t["labeler.k"] = field(&RunConfig::labeler, &labeler::LabelerConfig::k);
    t["labeler.dim"] = field(&RunConfig::labeler, &labeler::LabelerConfig::dim);
  t["labeler.restarts"] = field(&RunConfig::labeler, &labeler::LabelerConfig::restarts);

    t["model.kind"] = {[](RunConfig& c, std::string_view, std::string_view v) {
                         c.train.model.kind = parse_model_kind(v);
                       },
                       [](const RunConfig& c) { return std::string(to_string(c.train.model.kind)); }};
    t["model.fusion"] = {[](RunConfig& c, std::string_view, std::string_view v) {
                           c.train.model.fusion = parse_fusion(v);
                         },
                         [](const RunConfig& c) { return std::string(to_string(c.train.model.fusion)); }};
    t["model.hidden"] = model_field(&ModelConfig::hidden);
    t["model.n_head"] = model_field(&ModelConfig::n_head);
    t["model.structure_layers"] = model_field(&ModelConfig::structure_layers);
    t["model.shared_layers"] = model_field(&ModelConfig::shared_layers);
    t["model.independent_layers"] = model_field(&ModelConfig::independent_layers);
    t["model.generators"] = model_field(&ModelConfig::generators);
    t["model.max_phases"] = model_field(&ModelConfig::max_phases);
    t["model.ffn_multiplier"] = model_field(&ModelConfig::ffn_multiplier);
    t["model.dropout"] = model_field(&ModelConfig::dropout);
    t["model.grid_side"] = model_field(&ModelConfig::grid_side);
    t["model.conv_channels"] = model_field(&ModelConfig::conv_channels);
    t["model.freeze_image_encoder"] = model_field(&ModelConfig::freeze_image_encoder);
    t["model.max_ingredient_tokens"] = model_field(&ModelConfig::max_ingredient_tokens);
    t["model.baseline_layers"] = model_field(&ModelConfig::baseline_layers);
    t["model.baseline_hidden"] = model_field(&ModelConfig::baseline_hidden);
    t["model.max_phase_tokens"] = model_field(&ModelConfig::max_phase_tokens);
    t["model.max_recipe_tokens"] = model_field(&ModelConfig::max_recipe_tokens);

    t["train.learning_rate"] = field(&RunConfig::train, &TrainConfig::learning_rate);
    t["train.decay"] = field(&RunConfig::train, &TrainConfig::decay);
    t["train.epochs"] = field(&RunConfig::train, &TrainConfig::epochs);
    t["train.batch_size"] = field(&RunConfig::train, &TrainConfig::batch_size);
    t["train.clip_norm"] = field(&RunConfig::train, &TrainConfig::clip_norm);
    t["train.keep_best"] = field(&RunConfig::train, &TrainConfig::keep_best);
    t["train.patience"] = field(&RunConfig::train, &TrainConfig::patience);
    t["train.lambda_pre"] = weight_field(&LossWeights::pre);
    t["train.lambda_gen"] = weight_field(&LossWeights::gen);
    t["train.lambda_pos"] = weight_field(&LossWeights::pos);
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw DataError("config file '" + path.string() + "': " + e.message() + " at line " +
                    std::to_string(e.line()));
  }
  RunConfig c;
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) throw DataError("config key '" + section + "' is outside any section");
    for (const auto& [name, value] : entries) c.set(section + "." + name, value.data());
  }
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw DataError("unknown config key '" + std::string(key) + "'");
  it->second.set(*this, key, value);
}

void RunConfig::apply(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw DataError("override '" + o + "' is not key=value");
    set(std::string_view(o).substr(0, eq), std::string_view(o).substr(eq + 1));
  }
}

void RunConfig::resolve() {
  synth.seed = seed;
  labeler.seed = seed;
  train.seed = seed;
  if (val_fraction < 0 || val_fraction >= 1) throw DataError("run.val_fraction must be in [0, 1)");
  if (labeler.k < 1) throw DataError("labeler.k must be at least 1");
  if (labeler.restarts < 1) throw DataError("labeler.restarts must be at least 1");
  // The vocabulary size is only known once a corpus has been read.
  TrainConfig check = train;
  if (check.model.vocab_size == 0) check.model.vocab_size = corpus::Vocabulary::kReserved + 1;
  check.validate();
}

std::string RunConfig::to_ini() const {
  pt::ptree tree;
  for (const auto& [key, f] : fields()) tree.put(pt::ptree::path_type(key, '.'), f.get(*this));
  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

void RunConfig::save_snapshot(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / kRunConfigFile;
  std::ofstream out(path);
  if (!out || !(out << to_ini())) throw IoError("cannot write '" + path.string() + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, f] : fields()) out.push_back(key);
  return out;
}

}  // namespace dgn
