// SPDX-License-Identifier: Apache-2.0

#include "reir/synth.hpp"

#include <algorithm>
#include <cmath>

#include "reir/metrics.hpp"
#include "reir/rng.hpp"

namespace reir {

namespace {

double
normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Smooth, bounded map from the first four attribute dimensions to a box that
// always lies inside [0, extent]^2. Unit-sphere coordinates have marginal
// standard deviation ~ 1/sqrt(d), so they are widened by sqrt(d) before the
// probability integral transform to keep placement close to uniform.
Box
box_from_attrs(const Vec& a, double extent) {
  const double s = std::sqrt(static_cast<double>(a.size()));
  const double cx = extent * (0.12 + 0.76 * normal_cdf(s * a[0]));
  const double cy = extent * (0.12 + 0.76 * normal_cdf(s * a[1]));
  const double w = extent * (0.08 + 0.16 * normal_cdf(s * a[2]));
  const double h = extent * (0.08 + 0.16 * normal_cdf(s * a[3]));
  return Box{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

// Uniform draw on the unit sphere. Constant latent norm makes nearest
// neighbor under L2 and highest dot product agree, so the retrieval task
// the generator certifies (NN uniqueness) is exactly the task a dot-product
// scorer can solve.
Vec
sample_latent(Xoshiro256& rng, std::size_t dim) {
  Vec a(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& v : a) {
      v = rng.normal();
      norm2 += v * v;
    }
  } while (norm2 < 1e-24);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : a) {
    v *= inv;
  }
  return a;
}

struct SlotLayout {
  std::size_t n_images = 0;
  std::size_t per_image = 0;
  std::size_t n_pairs = 0;
  // rank -> latent id, filled once the twin pairing is drawn.
  std::vector<std::size_t> latent_of_rank;

  // Slots are enumerated position-major (all images at position 0, then
  // position 1, ...) so that consecutive slots sit in different images; the
  // first 2*n_pairs slots host the twin halves.
  std::size_t
  enumeration_rank(std::size_t image, std::size_t pos) const {
    return pos * n_images + image;
  }

  std::size_t
  image_of_rank(std::size_t rank) const {
    return rank % n_images;
  }

  bool
  is_twin(std::size_t image, std::size_t pos) const {
    return enumeration_rank(image, pos) < 2 * n_pairs;
  }

  std::size_t
  latent_id(std::size_t image, std::size_t pos) const {
    return latent_of_rank[enumeration_rank(image, pos)];
  }
};

// Pair up the twin host slots across images. A shuffled pairing keeps the
// two hosts of different pairs statistically unrelated; a fixed stride would
// route many pairs through the same two images, leaving the twins with
// near-identical neighborhoods and therefore near-identical relation
// summaries (nothing left to disambiguate them). Each drawn pair is repaired
// locally if both halves landed in one image, since the pair's hosts must
// differ for the decoy to live in another image.
void
assign_latents(SlotLayout& layout, Xoshiro256& rng) {
  const std::size_t n_twin = 2 * layout.n_pairs;
  const std::size_t n_slots = layout.n_images * layout.per_image;
  std::vector<std::size_t> twin(n_twin);
  for (std::size_t i = 0; i < n_twin; ++i) {
    twin[i] = i;
  }
  for (std::size_t i = n_twin; i > 1; --i) {
    std::swap(twin[i - 1], twin[rng.below(i)]);
  }
  for (std::size_t p = 0; p < layout.n_pairs; ++p) {
    const std::size_t a = 2 * p;
    const std::size_t img_a = layout.image_of_rank(twin[a]);
    if (layout.image_of_rank(twin[a + 1]) != img_a) {
      continue;
    }
    bool fixed = false;
    for (std::size_t q = 0; q < n_twin && !fixed; ++q) {
      if (q == a || q == a + 1) {
        continue;
      }
      // Swapping twin[a+1] with twin[q] must leave both affected pairs with
      // hosts in two distinct images.
      const std::size_t partner = (q % 2 == 0) ? q + 1 : q - 1;
      if (layout.image_of_rank(twin[q]) == img_a) {
        continue;
      }
      if (layout.image_of_rank(twin[a + 1]) == layout.image_of_rank(twin[partner])) {
        continue;
      }
      std::swap(twin[a + 1], twin[q]);
      fixed = true;
    }
    require(fixed, ErrorKind::kInvalidArgument,
            "synth: twin placement failed; too few images for the relation rate");
  }

  layout.latent_of_rank.assign(n_slots, 0);
  for (std::size_t p = 0; p < layout.n_pairs; ++p) {
    layout.latent_of_rank[twin[2 * p]] = p;
    layout.latent_of_rank[twin[2 * p + 1]] = p;
  }
  for (std::size_t rank = n_twin; rank < n_slots; ++rank) {
    layout.latent_of_rank[rank] = layout.n_pairs + (rank - n_twin);
  }
}

// Neighborhood summary: leading d_rel - 4 entries are the (truncated or
// zero-padded) mean of neighbor attribute latents; the last 4 are mean
// relative offsets, mean center distance, and mean log-area ratio.
Vec
relation_summary(const std::vector<Vec>& attrs, const std::vector<Box>& boxes, std::size_t self,
                 std::size_t d_rel, double extent) {
  Vec r(d_rel, 0.0);
  const std::size_t n = attrs.size();
  if (n < 2) {
    return r;
  }
  const std::size_t d_attr = attrs[self].size();
  const std::size_t head = d_rel - 4;
  const double cx = boxes[self].x + 0.5 * boxes[self].w;
  const double cy = boxes[self].y + 0.5 * boxes[self].h;
  const double log_area = std::log(boxes[self].area());

  double mdx = 0.0, mdy = 0.0, mdist = 0.0, mratio = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == self) continue;
    for (std::size_t d = 0; d < std::min(head, d_attr); ++d) {
      r[d] += attrs[i][d];
    }
    const double dx = (boxes[i].x + 0.5 * boxes[i].w - cx) / extent;
    const double dy = (boxes[i].y + 0.5 * boxes[i].h - cy) / extent;
    mdx += dx;
    mdy += dy;
    mdist += std::sqrt(dx * dx + dy * dy);
    mratio += std::log(boxes[i].area()) - log_area;
  }
  // The offset statistics are anchored at the instance's own box, which a
  // twin decoy shares (the box is a function of the shared attribute
  // latent), so they correlate across a twin pair; the neighbor-attribute
  // mean is the only component drawn from each host scene independently.
  // Down-weighting the offsets keeps that discriminative part dominant once
  // the summary is normalized to unit length. Constant ||r|| means a zeroed
  // relation block in a query adds ||r_x||^2 = 1 to every candidate distance
  // alike, so full-raw nearest neighbor stays decided by the evidence the
  // query actually carries (up to the noise cross term).
  const double inv = 1.0 / static_cast<double>(n - 1);
  const double offset_weight = 0.25 * inv;
  for (std::size_t d = 0; d < head; ++d) {
    r[d] *= inv;
  }
  r[head] = mdx * offset_weight;
  r[head + 1] = mdy * offset_weight;
  r[head + 2] = mdist * offset_weight;
  r[head + 3] = mratio * offset_weight;
  double norm2 = 0.0;
  for (double v : r) {
    norm2 += v * v;
  }
  if (norm2 > 1e-24) {
    const double scale = 1.0 / std::sqrt(norm2);
    for (double& v : r) {
      v *= scale;
    }
  }
  return r;
}

Vec
concat(const Vec& a, const Vec& b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double
squared_distance(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

void
SynthConfig::validate() const {
  require(n_images > 0 && instances_per_image > 0, ErrorKind::kInvalidArgument,
          "synth: image and instance counts must be positive");
  require(d_attr >= 4, ErrorKind::kInvalidArgument,
          "synth: d_attr must be at least 4 (box placement reads a[0..3])");
  require(d_rel >= 4, ErrorKind::kInvalidArgument,
          "synth: d_rel must be at least 4 (offset statistics)");
  require(relation_rate >= 0.0 && relation_rate <= 1.0, ErrorKind::kInvalidArgument,
          "synth: relation_rate must lie in [0,1]");
  require(noise_sigma >= 0.0, ErrorKind::kInvalidArgument,
          "synth: noise_sigma must be non-negative");
  require(scene_extent > 0.0, ErrorKind::kInvalidArgument,
          "synth: scene_extent must be positive");
  if (relation_rate > 0.0) {
    require(n_images >= 2, ErrorKind::kInvalidArgument,
            "synth: twin decoys need at least two images");
    require(instances_per_image >= 2, ErrorKind::kInvalidArgument,
            "synth: relation summaries need at least two instances per image");
  }
}

SynthBenchmark
generate_benchmark(const SynthConfig& cfg) {
  cfg.validate();
  Xoshiro256 rng(cfg.seed);

  const std::size_t n_total = cfg.n_images * cfg.instances_per_image;
  std::size_t n_rel =
      static_cast<std::size_t>(std::llround(cfg.relation_rate * static_cast<double>(n_total)));
  n_rel -= n_rel % 2;  // twins come in pairs

  SlotLayout layout;
  layout.n_images = cfg.n_images;
  layout.per_image = cfg.instances_per_image;
  layout.n_pairs = n_rel / 2;
  assign_latents(layout, rng);

  // Latents: pair latents first, then singles, in enumeration order.
  const std::size_t n_singles = n_total - 2 * layout.n_pairs;
  std::vector<Vec> latents;
  latents.reserve(layout.n_pairs + n_singles);
  for (std::size_t p = 0; p < layout.n_pairs; ++p) {
    latents.push_back(sample_latent(rng, cfg.d_attr));
  }
  for (std::size_t s = 0; s < n_singles; ++s) {
    latents.push_back(sample_latent(rng, cfg.d_attr));
  }

  // attrs[k][l] aliases the slot's latent; boxes derive from it.
  std::vector<std::vector<std::size_t>> slot_latent(cfg.n_images);
  for (std::size_t k = 0; k < cfg.n_images; ++k) {
    slot_latent[k].resize(cfg.instances_per_image);
    for (std::size_t l = 0; l < cfg.instances_per_image; ++l) {
      slot_latent[k][l] = layout.latent_id(k, l);
    }
  }
  const auto box_of = [&](std::size_t k, std::size_t l) {
    return box_from_attrs(latents[slot_latent[k][l]], cfg.scene_extent);
  };

  // Intra-image overlap rejection. Twins share a latent across two images,
  // so resampling a twin reshapes both hosts; the scan restarts until every
  // image is clean.
  std::size_t resamples = 0;
  const std::size_t resample_budget = 100 * n_total + 100;
  bool dirty = true;
  while (dirty) {
    dirty = false;
    for (std::size_t k = 0; k < cfg.n_images && !dirty; ++k) {
      for (std::size_t i = 0; i + 1 < cfg.instances_per_image && !dirty; ++i) {
        for (std::size_t j = i + 1; j < cfg.instances_per_image && !dirty; ++j) {
          if (iou(box_of(k, i), box_of(k, j)) <= 0.7) {
            continue;
          }
          // Prefer resampling a single slot; twins cost both hosts a reshape.
          std::size_t victim = layout.is_twin(k, j) && !layout.is_twin(k, i) ? i : j;
          require(++resamples <= resample_budget, ErrorKind::kInvalidArgument,
                  "synth: box overlap rejection failed to converge");
          latents[slot_latent[k][victim]] = sample_latent(rng, cfg.d_attr);
          dirty = true;
        }
      }
    }
  }

  // Boxes and relation summaries are now deterministic functions of latents.
  std::vector<std::vector<Vec>> attrs(cfg.n_images);
  std::vector<std::vector<Box>> boxes(cfg.n_images);
  std::vector<std::vector<Vec>> rels(cfg.n_images);
  for (std::size_t k = 0; k < cfg.n_images; ++k) {
    attrs[k].resize(cfg.instances_per_image);
    boxes[k].resize(cfg.instances_per_image);
    for (std::size_t l = 0; l < cfg.instances_per_image; ++l) {
      attrs[k][l] = latents[slot_latent[k][l]];
      boxes[k][l] = box_of(k, l);
    }
    rels[k].resize(cfg.instances_per_image);
    for (std::size_t l = 0; l < cfg.instances_per_image; ++l) {
      rels[k][l] = relation_summary(attrs[k], boxes[k], l, cfg.d_rel, cfg.scene_extent);
    }
  }

  SynthBenchmark bench;
  bench.instances.reserve(n_total);
  for (std::size_t k = 0; k < cfg.n_images; ++k) {
    for (std::size_t l = 0; l < cfg.instances_per_image; ++l) {
      InstanceRecord rec;
      rec.image_id = static_cast<std::int64_t>(k);
      rec.instance_id = static_cast<std::int64_t>(l);
      rec.raw = concat(attrs[k][l], rels[k][l]);
      rec.gt_box = boxes[k][l];
      rec.box = boxes[k][l];
      bench.instances.push_back(std::move(rec));
    }
  }

  // One query per instance. Twin instances get relation-dependent queries
  // (rho = 1); singles get attribute-only queries (rho = 0, which would be
  // ambiguous on a twin by construction).
  bench.queries.reserve(n_total);
  for (std::size_t k = 0; k < cfg.n_images; ++k) {
    for (std::size_t l = 0; l < cfg.instances_per_image; ++l) {
      const bool relational = layout.is_twin(k, l);
      const double rho = relational ? 1.0 : 0.0;
      const std::size_t target = k * cfg.instances_per_image + l;

      Vec raw;
      bool unique = false;
      for (int attempt = 0; attempt < 100 && !unique; ++attempt) {
        raw = concat(attrs[k][l], rels[k][l]);
        for (std::size_t d = 0; d < cfg.d_attr; ++d) {
          raw[d] += cfg.noise_sigma * rng.normal();
        }
        for (std::size_t d = 0; d < cfg.d_rel; ++d) {
          raw[cfg.d_attr + d] =
              rho * raw[cfg.d_attr + d] + cfg.noise_sigma * rng.normal();
        }
        // Exhaustive nearest-neighbor check over the full raw space: the
        // target must be the strict minimum, otherwise the expression is
        // ambiguous and gets resampled. Unit-norm relation summaries make
        // this reachable for attribute-only queries (a zeroed relation block
        // is equidistant from every candidate's r up to noise), while a twin
        // target needs rho = 1 because its partner ties on attributes.
        double best = squared_distance(raw, bench.instances[target].raw);
        unique = true;
        for (std::size_t other = 0; other < bench.instances.size(); ++other) {
          if (other == target) continue;
          if (squared_distance(raw, bench.instances[other].raw) <= best) {
            unique = false;
            break;
          }
        }
      }
      require(unique, ErrorKind::kInvalidArgument,
              "synth: uniqueness unreachable; noise too large relative to latent separation");

      QueryRecord q;
      q.query_id = static_cast<std::int64_t>(bench.queries.size());
      q.raw = std::move(raw);
      q.gt_image_id = static_cast<std::int64_t>(k);
      q.gt_instance_id = static_cast<std::int64_t>(l);
      q.gt_box = boxes[k][l];
      q.relation_dependent = relational;
      bench.queries.push_back(std::move(q));
    }
  }
  return bench;
}

}  // namespace reir
