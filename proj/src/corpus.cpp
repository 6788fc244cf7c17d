#include "dgn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "dgn/errors.hpp"

namespace dgn::corpus {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c) && c != '\'') {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::vector<PhaseSpan> segment_phases(std::size_t step_count) {
  if (step_count == 0) throw DataError("cannot segment an empty step list");
  const std::size_t phases = std::min(kMaxPhases, step_count);
  const std::size_t base = step_count / phases;
  const std::size_t extra = step_count % phases;
  std::vector<PhaseSpan> spans;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < phases; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    spans.push_back({begin, begin + len});
    begin += len;
  }
  return spans;
}

std::vector<PhaseSpan> segment_phases(std::span<const std::string> steps) {
  return segment_phases(steps.size());
}

Vocabulary::Vocabulary() {
  for (const char* t : {"[PAD]", "[START]", "[END]", "[EOPHASE]", "[UNK]"}) add(t);
}

void Vocabulary::add(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const RecipeRecord& r : corpus) {
    for (const std::string& s : r.ingredients)
      for (auto& t : tokenize(s)) ++counts[t];
    for (const std::string& s : r.steps)
      for (auto& t : tokenize(s)) ++counts[t];
  }
  Vocabulary v;
  for (auto& [token, n] : counts) {
    if (n >= min_freq && !v.contains(token)) v.add(token);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  if (tokens.size() < kReserved ||
      !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw DataError("vocabulary token list does not start with the reserved tokens");
  }
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnknown : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.contains(std::string(token));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && static_cast<std::size_t>(id) < kReserved) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

namespace {

const json& required(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw DataError("line " + std::to_string(line) + ": missing required field '" + field + "'");
  }
  return *it;
}

RecipeRecord parse_record(const json& obj, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!obj.is_object()) throw DataError(where + "record is not a JSON object");
  RecipeRecord r;
  try {
    r.id = required(obj, "id", line).get<std::string>();
    const json& feat = required(obj, "image_feat", line);
    const json& grid = required(obj, "image_grid", line);
    if (feat.is_null() == grid.is_null()) {
      throw DataError(where + "exactly one of 'image_feat' and 'image_grid' must be non-null");
    }
    if (!feat.is_null()) r.image_feat = feat.get<std::vector<double>>();
    if (!grid.is_null()) r.image_grid = grid.get<ImageGrid>();
    if (!feat.is_null() && r.image_feat.empty()) throw DataError(where + "empty 'image_feat'");
    if (!grid.is_null()) {
      if (r.image_grid.empty() || r.image_grid[0].empty()) {
        throw DataError(where + "empty 'image_grid'");
      }
      for (const auto& row : r.image_grid) {
        if (row.size() != r.image_grid[0].size()) throw DataError(where + "ragged 'image_grid'");
      }
    }
    r.ingredients = required(obj, "ingredients", line).get<std::vector<std::string>>();
    r.steps = required(obj, "steps", line).get<std::vector<std::string>>();
    if (auto it = obj.find("labels"); it != obj.end() && !it->is_null()) {
      r.pseudo_labels = it->get<std::vector<int>>();
    }
    if (auto it = obj.find("planted"); it != obj.end() && !it->is_null()) {
      r.planted = it->get<std::vector<int>>();
    }
  } catch (const json::exception& e) {
    throw DataError(where + "wrong field type (" + e.what() + ")");
  }
  if (r.steps.empty()) throw DataError(where + "record '" + r.id + "' has no steps");
  r.phases = segment_phases(r.steps);
  if (r.labeled() && r.pseudo_labels.size() != r.phases.size()) {
    throw DataError(where + "record '" + r.id + "' has " + std::to_string(r.pseudo_labels.size()) +
                    " labels for " + std::to_string(r.phases.size()) + " phases");
  }
  if (!r.planted.empty() && r.planted.size() != r.phases.size()) {
    throw DataError(where + "planted types do not match phase count");
  }
  return r;
}

ordered_json record_json(const RecipeRecord& r) {
  ordered_json obj;
  obj["id"] = r.id;
  obj["image_feat"] = r.image_feat.empty() ? ordered_json(nullptr) : ordered_json(r.image_feat);
  obj["image_grid"] = r.image_grid.empty() ? ordered_json(nullptr) : ordered_json(r.image_grid);
  obj["ingredients"] = r.ingredients;
  obj["steps"] = r.steps;
  if (r.labeled()) obj["labels"] = r.pseudo_labels;
  if (!r.planted.empty()) obj["planted"] = r.planted;
  return obj;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  Corpus corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (blank(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(number) + ": malformed JSON (" + e.what() + ")");
    }
    corpus.push_back(parse_record(obj, number));
  }
  return corpus;
}

void save_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  auto out = open_for_write(path);
  for (const RecipeRecord& r : corpus) out << record_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_labels(const std::filesystem::path& path, const Corpus& corpus) {
  auto out = open_for_write(path);
  for (const RecipeRecord& r : corpus) {
    ordered_json obj;
    obj["id"] = r.id;
    obj["labels"] = r.pseudo_labels;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void load_labels(const std::filesystem::path& path, Corpus& corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::unordered_map<std::string, std::vector<int>> labels;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (blank(line)) continue;
    try {
      json obj = json::parse(line);
      labels[required(obj, "id", number).get<std::string>()] =
          required(obj, "labels", number).get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  for (RecipeRecord& r : corpus) {
    auto it = labels.find(r.id);
    if (it == labels.end()) continue;
    if (it->second.size() != r.phases.size()) {
      throw DataError("labels for '" + r.id + "' do not match its phase count");
    }
    r.pseudo_labels = it->second;
  }
}

std::size_t train_count(std::size_t total, double val_fraction) {
  if (val_fraction < 0 || val_fraction >= 1) throw DataError("val_fraction must be in [0, 1)");
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(total) * val_fraction));
  return total - std::min(val, total);
}

}  // namespace dgn::corpus
