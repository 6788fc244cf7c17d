#include "dgn/encoders.hpp"

#include <spdlog/spdlog.h>

#include "dgn/errors.hpp"

namespace dgn {

void truncate_tokens(std::vector<int>& ids, std::size_t cap, const std::string& what) {
  if (ids.size() <= cap) return;
  spdlog::warn("{}: {} tokens truncated to {}", what, ids.size(), cap);
  ids.resize(cap);
}

EncodedRecipe encode_recipe(const corpus::RecipeRecord& record, const corpus::Vocabulary& vocab,
                            const ModelConfig& config) {
  EncodedRecipe e;
  e.id = record.id;
  if (config.grid_images) {
    if (!record.has_grid()) throw DataError("record '" + record.id + "' has no image grid");
    if (record.image_grid.size() != config.grid_side) {
      throw DataError("record '" + record.id + "' grid is " + std::to_string(record.image_grid.size()) +
                      " rows, expected " + std::to_string(config.grid_side));
    }
    for (const auto& row : record.image_grid) {
      if (row.size() != config.grid_side) throw DataError("record '" + record.id + "' grid is not square");
      e.image.insert(e.image.end(), row.begin(), row.end());
    }
  } else {
    if (record.has_grid()) throw DataError("record '" + record.id + "' has a grid but raw features are configured");
    if (record.image_feat.size() != config.image_dim) {
      throw DataError("record '" + record.id + "' image has " + std::to_string(record.image_feat.size()) +
                      " values, expected " + std::to_string(config.image_dim));
    }
    e.image.assign(record.image_feat.begin(), record.image_feat.end());
  }

  for (const std::string& ingredient : record.ingredients) {
    for (const std::string& t : corpus::tokenize(ingredient)) e.ingredients.push_back(vocab.id(t));
  }
  truncate_tokens(e.ingredients, config.max_ingredient_tokens, "ingredients of '" + record.id + "'");

  for (const corpus::PhaseSpan& span : record.phases) {
    std::vector<int> ids;
    for (std::size_t s = span.begin; s < span.end; ++s) {
      for (const std::string& t : corpus::tokenize(record.steps[s])) ids.push_back(vocab.id(t));
    }
    // One position is reserved for [START].
    truncate_tokens(ids, config.max_phase_tokens - 1, "phase of '" + record.id + "'");
    e.phases.push_back(std::move(ids));
  }
  e.labels = record.pseudo_labels;
  e.planted = record.planted;
  return e;
}

std::vector<EncodedRecipe> encode_corpus(const corpus::Corpus& corpus,
                                         const corpus::Vocabulary& vocab,
                                         const ModelConfig& config) {
  std::vector<EncodedRecipe> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back(encode_recipe(r, vocab, config));
  return out;
}

ImageEncoder::ImageEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : grid_(config.grid_images),
      raw_dim_(config.image_dim),
      side_(config.grid_side),
      channels_(config.conv_channels) {
  if (grid_) {
    // Bias-free convolutions keep a zero image at zero until the output map.
    conv1_ = &store.xavier("image.conv1", {9, channels_}, rng);
    conv2_ = &store.xavier("image.conv2", {9 * channels_, channels_}, rng);
    out_ = nn::Linear(store, "image.out", channels_, config.hidden, rng);
  } else {
    out_ = nn::Linear(store, "image.out", raw_dim_, config.hidden, rng);
  }
}

Tensor ImageEncoder::conv(const Tensor& x, std::size_t images, std::size_t in_channels,
                          const Parameter& kernel, Session& s) const {
  const std::size_t area = side_ * side_;
  const std::size_t width = 9 * in_channels;
  std::vector<long> index(images * area * width, -1);
  for (std::size_t n = 0; n < images; ++n)
    for (std::size_t i = 0; i < side_; ++i)
      for (std::size_t j = 0; j < side_; ++j) {
        const std::size_t row = n * area + i * side_ + j;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
            if (ii < 0 || jj < 0 || ii >= long(side_) || jj >= long(side_)) continue;
            const std::size_t k = static_cast<std::size_t>((di + 1) * 3 + (dj + 1));
            const std::size_t src = n * area + static_cast<std::size_t>(ii) * side_ + static_cast<std::size_t>(jj);
            for (std::size_t c = 0; c < in_channels; ++c) {
              index[row * width + k * in_channels + c] = static_cast<long>(src * in_channels + c);
            }
          }
      }
  Tensor patches = gather(x, index, {images * area, width});
  return gelu(matmul(patches, s(kernel)));
}

nn::SequenceBatch ImageEncoder::encode_batch(Session& s,
                                             std::span<const std::span<const Real>> images) const {
  const std::size_t n = images.size();
  std::vector<Real> flat;
  flat.reserve(n * input_size());
  for (const auto& img : images) {
    if (img.size() != input_size()) {
      throw ShapeError("image encoder expects " + std::to_string(input_size()) + " values, got " +
                       std::to_string(img.size()));
    }
    flat.insert(flat.end(), img.begin(), img.end());
  }
  nn::SequenceBatch out;
  if (!grid_) {
    out.rows = out_(s, Tensor::from({n, raw_dim_}, std::move(flat)));
    for (std::size_t i = 0; i < n; ++i) out.segments.push_back({i, 1});
    return out;
  }
  const std::size_t area = side_ * side_;
  Tensor x = Tensor::from({n * area, 1}, std::move(flat));
  x = conv(x, n, 1, *conv1_, s);
  x = conv(x, n, channels_, *conv2_, s);

  // Regroup rows by quadrant, then average each quadrant.
  const std::size_t half = (side_ + 1) / 2;
  std::vector<long> order;
  std::vector<Segment> quadrants;
  order.reserve(n * area * channels_);
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t start = order.size() / channels_;
      for (std::size_t i = 0; i < side_; ++i)
        for (std::size_t j = 0; j < side_; ++j) {
          const std::size_t quadrant = (i < half ? 0 : 2) + (j < half ? 0 : 1);
          if (quadrant != q) continue;
          const std::size_t row = img * area + i * side_ + j;
          for (std::size_t c = 0; c < channels_; ++c) order.push_back(static_cast<long>(row * channels_ + c));
        }
      quadrants.push_back({start, order.size() / channels_ - start});
    }
  Tensor grouped = gather(x, order, {n * area, channels_});
  out.rows = out_(s, segment_mean(grouped, quadrants));
  for (std::size_t i = 0; i < n; ++i) out.segments.push_back({4 * i, 4});
  return out;
}

Tensor ImageEncoder::encode(Session& s, std::span<const Real> image) const {
  const std::span<const Real> one[] = {image};
  return encode_batch(s, one).rows;
}

IngredientEncoder::IngredientEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng) {
  embed_ = &store.normal("ingr.embed", {config.vocab_size, config.hidden},
                         Real(1) / std::sqrt(static_cast<Real>(config.hidden)), rng);
  proj_ = nn::Linear(store, "ingr.proj", config.hidden, config.hidden, rng);
}

nn::SequenceBatch IngredientEncoder::encode_batch(
    Session& s, std::span<const std::span<const int>> lists) const {
  std::vector<int> ids;
  nn::SequenceBatch out;
  for (const auto& list : lists) {
    const std::size_t offset = ids.size();
    if (list.empty()) {
      ids.push_back(corpus::Vocabulary::kUnknown);
    } else {
      ids.insert(ids.end(), list.begin(), list.end());
    }
    out.segments.push_back({offset, ids.size() - offset});
  }
  out.rows = proj_(s, embedding(s(*embed_), ids));
  return out;
}

Tensor IngredientEncoder::encode(Session& s, std::span<const int> ids) const {
  const std::span<const int> one[] = {ids};
  return encode_batch(s, one).rows;
}

Tensor IngredientEncoder::pooled(const Tensor& rows) { return mean(rows, 0); }

}  // namespace dgn
