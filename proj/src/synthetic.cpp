#include "dgn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "dgn/errors.hpp"
#include "dgn/rng.hpp"

namespace dgn::synthetic {
namespace {

constexpr std::array<std::array<std::string_view, 5>, kMaxPhaseTypes> kVerbs{{
    {"chop", "wash", "peel", "slice", "measure"},
    {"heat", "fry", "boil", "simmer", "bake"},
    {"serve", "garnish", "plate", "cool", "sprinkle"},
}};

constexpr std::array<std::array<std::string_view, 3>, kMaxPhaseTypes> kComplements{{
    {"into pieces", "finely", "in a bowl"},
    {"in a pan", "for ten minutes", "until golden"},
    {"on a dish", "while warm", "with fresh leaves"},
}};

constexpr std::array<std::string_view, kMaxPhaseTypes> kTypeNames{"prep", "cook", "finish"};

constexpr std::array<std::string_view, 60> kIngredients{
    "onion",   "garlic",   "carrot",   "potato",    "tomato",    "pepper",   "celery",
    "spinach", "cabbage",  "broccoli", "zucchini",  "mushroom",  "eggplant", "leek",
    "pumpkin", "cucumber", "lettuce",  "corn",      "peas",      "beans",    "lentils",
    "rice",    "pasta",    "noodles",  "flour",     "sugar",     "butter",   "milk",
    "cream",   "cheese",   "yogurt",   "egg",       "chicken",   "beef",     "pork",
    "lamb",    "shrimp",   "salmon",   "tuna",      "tofu",      "bacon",    "sausage",
    "apple",   "banana",   "lemon",    "lime",      "orange",    "mango",    "peach",
    "pear",    "berries",  "ginger",   "basil",     "parsley",   "cilantro", "thyme",
    "rosemary", "cinnamon", "honey",   "almonds",
};

void check_type(std::size_t type) {
  if (type >= kMaxPhaseTypes) {
    throw DataError("phase type " + std::to_string(type) + " outside [0, " +
                    std::to_string(kMaxPhaseTypes) + ")");
  }
}

void validate(const SyntheticConfig& c) {
  if (c.recipes == 0) throw DataError("synthetic corpus needs at least one recipe");
  if (c.phase_types == 0 || c.phase_types > kMaxPhaseTypes) {
    throw DataError("phase_types must be in [1, 3]");
  }
  if (c.image_dim == 0) throw DataError("image_dim must be positive");
  if (c.min_steps == 0 || c.min_steps > c.max_steps) throw DataError("invalid step range");
  if (c.min_ingredients == 0 || c.min_ingredients > c.max_ingredients ||
      c.max_ingredients > kIngredients.size()) {
    throw DataError("invalid ingredient range");
  }
  if (c.dominant_probability <= 0 || c.dominant_probability > 1) {
    throw DataError("dominant_probability must be in (0, 1]");
  }
}

std::string render_step(std::string_view verb, std::string_view first, std::string_view second,
                        std::string_view complement) {
  std::string s(verb);
  s += ' ';
  s += first;
  if (!second.empty()) {
    s += " and ";
    s += second;
  }
  s += ' ';
  s += complement;
  s += '.';
  return s;
}

// Fixed random projections shared by every recipe of one corpus.
struct ImageWorld {
  std::vector<double> ingredient_map;  // image_dim x 60
  std::vector<double> signature_map;   // image_dim x (3 slots * (types + 1))
  std::size_t signature_width = 0;
};

ImageWorld make_world(const SyntheticConfig& c, Rng& rng) {
  ImageWorld w;
  w.signature_width = kMaxPhaseTypes * (c.phase_types + 1);
  w.ingredient_map.resize(c.image_dim * kIngredients.size());
  w.signature_map.resize(c.image_dim * w.signature_width);
  for (double& x : w.ingredient_map) x = rng.normal(0, 0.5);
  for (double& x : w.signature_map) x = rng.normal(0, 1);
  return w;
}

std::vector<double> render_image(const SyntheticConfig& c, const ImageWorld& w,
                                 const std::vector<std::size_t>& ingredients,
                                 const std::vector<int>& types, Rng& rng) {
  std::vector<double> image(c.image_dim, 0.0);
  for (std::size_t d = 0; d < c.image_dim; ++d) {
    double v = 0;
    for (std::size_t ing : ingredients) v += w.ingredient_map[d * kIngredients.size() + ing];
    for (std::size_t slot = 0; slot < kMaxPhaseTypes; ++slot) {
      // Absent slots use the extra code `phase_types`.
      const std::size_t code =
          slot < types.size() ? static_cast<std::size_t>(types[slot]) : c.phase_types;
      v += w.signature_map[d * w.signature_width + slot * (c.phase_types + 1) + code];
    }
    image[d] = v + c.noise * rng.normal();
  }
  return image;
}

corpus::ImageGrid to_grid(const std::vector<double>& image) {
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(image.size()))));
  corpus::ImageGrid grid(side, std::vector<double>(side, 0.0));
  for (std::size_t i = 0; i < image.size(); ++i) grid[i / side][i % side] = image[i];
  return grid;
}

}  // namespace

std::span<const std::string_view> phase_verbs(std::size_t type) {
  check_type(type);
  return kVerbs[type];
}

std::span<const std::string_view> phase_complements(std::size_t type) {
  check_type(type);
  return kComplements[type];
}

std::span<const std::string_view> ingredient_lexicon() { return kIngredients; }

std::string_view phase_type_name(std::size_t type) {
  check_type(type);
  return kTypeNames[type];
}

std::vector<PhaseTemplate> phase_templates(const SyntheticConfig& config) {
  validate(config);
  std::vector<int> dominant;
  for (std::size_t slot = 0; slot < corpus::kMaxPhases; ++slot) {
    dominant.push_back(static_cast<int>(slot % config.phase_types));
  }
  std::vector<std::vector<int>> others;
  std::vector<int> perm = dominant;
  std::sort(perm.begin(), perm.end());
  do {
    if (perm != dominant) others.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<PhaseTemplate> templates;
  if (others.empty()) {
    templates.push_back({dominant, 1.0});
    return templates;
  }
  templates.push_back({dominant, config.dominant_probability});
  const double rest = (1.0 - config.dominant_probability) / static_cast<double>(others.size());
  for (auto& t : others) templates.push_back({std::move(t), rest});
  return templates;
}

corpus::Corpus generate(const SyntheticConfig& config) {
  validate(config);
  Rng rng(config.seed);
  const ImageWorld world = make_world(config, rng);
  const std::vector<PhaseTemplate> templates = phase_templates(config);
  std::vector<double> template_weights;
  for (const auto& t : templates) template_weights.push_back(t.probability);

  const int id_width = static_cast<int>(std::to_string(config.recipes - 1).size());
  corpus::Corpus out;
  out.reserve(config.recipes);
  for (std::size_t n = 0; n < config.recipes; ++n) {
    corpus::RecipeRecord r;
    std::ostringstream id;
    id << "syn-" << std::setw(id_width) << std::setfill('0') << n;
    r.id = id.str();

    const PhaseTemplate& tpl = templates[rng.categorical(template_weights)];
    const std::size_t steps =
        config.min_steps + rng.index(config.max_steps - config.min_steps + 1);
    r.phases = corpus::segment_phases(steps);
    r.planted.assign(tpl.types.begin(), tpl.types.begin() + static_cast<long>(r.phases.size()));

    std::vector<std::size_t> pool(kIngredients.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    rng.shuffle(pool);
    const std::size_t n_ingr =
        config.min_ingredients + rng.index(config.max_ingredients - config.min_ingredients + 1);
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<long>(n_ingr));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) r.ingredients.emplace_back(kIngredients[i]);

    for (std::size_t p = 0; p < r.phases.size(); ++p) {
      const auto type = static_cast<std::size_t>(r.planted[p]);
      for (std::size_t s = r.phases[p].begin; s < r.phases[p].end; ++s) {
        const std::string_view verb = kVerbs[type][rng.index(kVerbs[type].size())];
        const std::size_t first = rng.index(chosen.size());
        std::string_view second;
        if (chosen.size() > 1 && rng.uniform() < config.second_ingredient_probability) {
          std::size_t other = rng.index(chosen.size() - 1);
          if (other >= first) ++other;
          second = kIngredients[chosen[other]];
        }
        const std::string_view complement =
            kComplements[type][rng.index(kComplements[type].size())];
        r.steps.push_back(render_step(verb, kIngredients[chosen[first]], second, complement));
      }
    }

    std::vector<double> image = render_image(config, world, chosen, r.planted, rng);
    if (config.grid_images) {
      r.image_grid = to_grid(image);
    } else {
      r.image_feat = std::move(image);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string manifest(const SyntheticConfig& config, const corpus::Corpus& corpus) {
  std::map<std::vector<int>, std::size_t> template_counts;
  std::size_t steps = 0;
  for (const auto& r : corpus) {
    ++template_counts[r.planted];
    steps += r.steps.size();
  }
  std::ostringstream out;
  out << std::setprecision(17);
  out << "seed = " << config.seed << '\n'
      << "recipes = " << corpus.size() << '\n'
      << "phase_types = " << config.phase_types << '\n'
      << "image_dim = " << config.image_dim << '\n'
      << "grid_images = " << (config.grid_images ? "true" : "false") << '\n'
      << "noise = " << config.noise << '\n'
      << "steps = " << config.min_steps << ".." << config.max_steps << '\n'
      << "ingredients = " << config.min_ingredients << ".." << config.max_ingredients << '\n'
      << "dominant_probability = " << config.dominant_probability << '\n'
      << "total_steps = " << steps << '\n';
  for (const auto& [types, count] : template_counts) {
    out << "planted";
    for (int t : types) out << '.' << phase_type_name(static_cast<std::size_t>(t));
    out << " = " << count << '\n';
  }
  return out.str();
}

}  // namespace dgn::synthetic
