// SPDX-License-Identifier: Apache-2.0

#include "reir/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "reir/io.hpp"
#include "reir/rng.hpp"

namespace reir {

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'E', 'I', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Contrastive scalar initialization. The objective family this loss extends
// publishes t = 10 with a bias that starts every pairwise logit deep on the
// negative side, so the few positive pairs carry almost all of the early
// gradient while the many negatives are nearly free. The per-pair logit here
// is z * (b - t * s), which reverses the bias sign relative to that family's
// z * (t * s + b), so the same asymmetry requires b = +10.
double
default_log_temperature() {
  return std::log(10.0);
}

constexpr double kDefaultBias = 10.0;

FeedForward
shaped_ffn(std::size_t in, std::size_t hidden, std::size_t out) {
  FeedForward f;
  f.layer1.weight = Mat(hidden, in);
  f.layer1.bias.assign(hidden, 0.0);
  f.layer2.weight = Mat(out, hidden);
  f.layer2.bias.assign(out, 0.0);
  return f;
}

// Zero-valued parameters with the dimensions implied by the config; the
// checkpoint loader fills them from the flat block.
ToyModelParams
shaped_params(const ModelDims& dims, const MoreConfig& more) {
  ToyModelParams p;
  p.instance_encoder = shaped_ffn(dims.d_raw, dims.hidden, dims.d_embed);
  p.expression_encoder = shaped_ffn(dims.d_txt, dims.hidden, more.dim_in);
  p.more.shared_experts.assign(more.n_shared,
                               shaped_ffn(more.dim_in, more.dim_hidden, more.dim_out));
  p.more.routed_experts.assign(more.n_routed,
                               shaped_ffn(more.dim_in, more.dim_hidden, more.dim_out));
  p.more.gating.weight = Mat(more.n_routed, more.dim_in);
  p.more.gating.bias.assign(more.n_routed, 0.0);
  p.box_head = shaped_ffn(dims.d_embed, dims.hidden, 4);
  return p;
}

struct BatchView {
  StageBatch batch;
  std::vector<const QueryRecord*> query_refs;        // aligned with batch.refined
  std::vector<std::vector<InstanceTrace>> inst_traces;  // aligned with batch.features
  std::vector<ExpressionTrace> expr_traces;          // aligned with batch.refined
};

BatchView
assemble_batch(const ToyModelParams& params, const DataSet& data,
               const std::vector<std::size_t>& image_idx, std::size_t k_eff, int stage) {
  BatchView view;
  view.batch.stage = stage;
  view.batch.features.resize(image_idx.size());
  view.batch.pred_boxes.resize(image_idx.size());
  view.batch.gt_boxes.resize(image_idx.size());
  view.inst_traces.resize(image_idx.size());
  for (std::size_t k = 0; k < image_idx.size(); ++k) {
    const auto& instances = data.image(image_idx[k]);
    for (const InstanceRecord& rec : instances) {
      InstanceTrace tr;
      EncodedInstance enc = encode_instance_trace(params, rec.raw, tr);
      view.inst_traces[k].push_back(std::move(tr));
      view.batch.features[k].push_back(std::move(enc.feature));
      view.batch.pred_boxes[k].push_back(enc.box);
      view.batch.gt_boxes[k].push_back(rec.gt_box);
    }
  }
  for (std::size_t k = 0; k < image_idx.size(); ++k) {
    for (const DataSet::AttachedQuery& aq : data.queries_of(image_idx[k])) {
      MatchLabel label;
      label.query = view.batch.refined.size();
      label.image = k;
      label.instance = aq.instance_pos;
      ExpressionTrace tr;
      view.batch.refined.push_back(encode_expression_trace(params, aq.record.raw, k_eff, tr));
      view.expr_traces.push_back(std::move(tr));
      view.batch.labels.push_back(label);
      view.query_refs.push_back(&aq.record);
    }
  }
  return view;
}

StageResult
batch_loss(const BatchView& view, const TrainConfig& cfg, const CliaParams& clia) {
  if (cfg.stage == 1) {
    return pretrain_loss(view.batch, cfg.focal, cfg.weights);
  }
  return finetune_loss(view.batch, clia, cfg.focal, cfg.weights, cfg.use_clia);
}

ToyModelGrad
backward_batch(const ToyModelParams& params, const DataSet& data,
               const std::vector<std::size_t>& image_idx, const BatchView& view,
               const StageResult& sr) {
  ToyModelGrad grad = make_zero_grad(params);
  for (std::size_t k = 0; k < image_idx.size(); ++k) {
    const auto& instances = data.image(image_idx[k]);
    for (std::size_t l = 0; l < instances.size(); ++l) {
      encode_instance_backward_trace(params, instances[l].raw, view.inst_traces[k][l],
                                     sr.grads.d_features[k][l], sr.grads.d_pred_boxes[k][l],
                                     grad);
    }
  }
  for (std::size_t i = 0; i < view.query_refs.size(); ++i) {
    encode_expression_backward_trace(params, view.query_refs[i]->raw, view.expr_traces[i],
                                     sr.grads.d_refined[i], grad);
  }
  grad.d_log_t = sr.grads.d_log_t;
  grad.d_b = sr.grads.d_b;
  return grad;
}

std::vector<std::uint8_t>
stage_mask(const ToyModelParams& params, int stage) {
  std::vector<std::uint8_t> mask(value_count(params), 1);
  if (stage == 1) {
    const ParamSections s = param_sections(params);
    for (const auto& range : {s.routed_experts, s.gating, s.clia}) {
      std::fill(mask.begin() + static_cast<std::ptrdiff_t>(range.first),
                mask.begin() + static_cast<std::ptrdiff_t>(range.second), 0);
    }
  }
  return mask;
}

void
accumulate(LossBreakdown& into, const LossBreakdown& b) {
  into.clia += b.clia;
  into.focal += b.focal;
  into.box_l1 += b.box_l1;
  into.box_giou += b.box_giou;
  into.total += b.total;
}

LossBreakdown
scaled(const LossBreakdown& b, double f) {
  return LossBreakdown{b.clia * f, b.focal * f, b.box_l1 * f, b.box_giou * f, b.total * f};
}

// The common SGD loop; `params` and `velocity` are updated in place.
std::vector<LossBreakdown>
run_epochs(const TrainConfig& cfg, const DataSet& data, Xoshiro256& rng, ToyModelParams& params,
           Vec& velocity, std::uint64_t& steps) {
  const std::size_t k_eff = cfg.stage == 1 ? 0 : cfg.more.k_routed;
  const std::vector<std::uint8_t> mask = stage_mask(params, cfg.stage);
  require(velocity.size() == mask.size(), ErrorKind::kCheckpointMismatch,
          "trainer: optimizer state length does not match the parameter count");

  const std::size_t decay_epoch =
      static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(cfg.epochs)));

  std::vector<std::size_t> order(data.n_images());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }

  std::vector<LossBreakdown> epoch_losses;
  epoch_losses.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * (cfg.epochs > 1 && epoch >= decay_epoch ? 0.1 : 1.0);
    // Fisher-Yates; the only randomness in an epoch.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }

    LossBreakdown epoch_sum;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_images) {
      const std::size_t end = std::min(begin + cfg.batch_images, order.size());
      const std::vector<std::size_t> image_idx(order.begin() + begin, order.begin() + end);

      const BatchView view = assemble_batch(params, data, image_idx, k_eff, cfg.stage);
      const StageResult sr = batch_loss(view, cfg, params.clia);
      require(std::isfinite(sr.breakdown.total), ErrorKind::kDivergence,
              "trainer: loss diverged at step " + std::to_string(steps));
      accumulate(epoch_sum, sr.breakdown);
      ++n_batches;

      const ToyModelGrad grad = backward_batch(params, data, image_idx, view, sr);
      Vec g;
      append_values(grad, g);
      Vec p;
      append_values(params, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!mask[i]) continue;
        velocity[i] = cfg.momentum * velocity[i] - lr * (g[i] + cfg.weight_decay * p[i]);
        p[i] += velocity[i];
      }
      const std::size_t consumed = read_values(params, p, 0);
      require(consumed == p.size(), ErrorKind::kNumeric, "trainer: parameter length drift");
      ++steps;
    }
    epoch_losses.push_back(scaled(epoch_sum, 1.0 / static_cast<double>(n_batches)));
  }
  return epoch_losses;
}

void
check_data_compat(const TrainConfig& cfg, const DataSet& data) {
  require(data.n_images() > 0, ErrorKind::kInvalidArgument, "trainer: empty dataset");
  require(data.d_raw() == cfg.dims.d_raw, ErrorKind::kInvalidArgument,
          "trainer: instance raw width " + std::to_string(data.d_raw()) +
              " does not match configured d_raw " + std::to_string(cfg.dims.d_raw));
  require(data.d_txt() == cfg.dims.d_txt, ErrorKind::kInvalidArgument,
          "trainer: query raw width " + std::to_string(data.d_txt()) +
              " does not match configured d_txt " + std::to_string(cfg.dims.d_txt));
}

void
require_matching(std::size_t a, std::size_t b, const char* field) {
  require(a == b, ErrorKind::kCheckpointMismatch,
          std::string("checkpoint mismatch on ") + field + ": " + std::to_string(a) + " vs " +
              std::to_string(b));
}

}  // namespace

void
TrainConfig::validate() const {
  require(stage == 1 || stage == 2, ErrorKind::kInvalidArgument, "trainer: stage must be 1 or 2");
  require(learning_rate > 0.0, ErrorKind::kInvalidArgument,
          "trainer: learning rate must be positive");
  require(batch_images >= 1, ErrorKind::kInvalidArgument,
          "trainer: batch_images must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::kInvalidArgument,
          "trainer: momentum must lie in [0,1)");
  require(weight_decay >= 0.0, ErrorKind::kInvalidArgument,
          "trainer: weight decay must be non-negative");
  require(dims.d_raw > 0 && dims.d_txt > 0 && dims.d_embed > 0 && dims.hidden > 0,
          ErrorKind::kInvalidArgument, "trainer: dimensions must be positive");
  more.validate();
  require(more.dim_out == dims.d_embed, ErrorKind::kInvalidArgument,
          "trainer: expert output width must equal the embedding width");
  require(weights.w_retrieve >= 0.0 && weights.w_box >= 0.0 && weights.lambda_giou >= 0.0 &&
              weights.lambda_l1 >= 0.0,
          ErrorKind::kInvalidArgument, "trainer: loss weights must be non-negative");
}

DataSet
DataSet::build(const std::vector<InstanceRecord>& instances,
               const std::vector<QueryRecord>& queries) {
  require(!instances.empty(), ErrorKind::kInvalidArgument, "dataset: no instances");

  std::map<std::int64_t, std::map<std::int64_t, const InstanceRecord*>> grouped;
  for (const InstanceRecord& rec : instances) {
    require(rec.raw.size() == instances.front().raw.size(), ErrorKind::kDimensionMismatch,
            "dataset: inconsistent instance raw width");
    require(rec.gt_box.valid(), ErrorKind::kDataIntegrity, "dataset: degenerate gt box");
    const bool inserted = grouped[rec.image_id].emplace(rec.instance_id, &rec).second;
    require(inserted, ErrorKind::kInvalidArgument,
            "dataset: duplicate instance (" + std::to_string(rec.image_id) + ", " +
                std::to_string(rec.instance_id) + ")");
  }

  DataSet ds;
  ds.d_raw_ = instances.front().raw.size();
  std::map<std::pair<std::int64_t, std::int64_t>, std::pair<std::size_t, std::size_t>> locator;
  for (const auto& [image_id, by_instance] : grouped) {
    ds.image_ids_.push_back(image_id);
    ds.images_.emplace_back();
    for (const auto& [instance_id, rec] : by_instance) {
      locator[{image_id, instance_id}] = {ds.images_.size() - 1, ds.images_.back().size()};
      ds.images_.back().push_back(*rec);
    }
  }
  ds.queries_.resize(ds.images_.size());

  for (const QueryRecord& q : queries) {
    if (ds.d_txt_ == 0) {
      ds.d_txt_ = q.raw.size();
    }
    require(q.raw.size() == ds.d_txt_, ErrorKind::kDimensionMismatch,
            "dataset: inconsistent query raw width");
    const auto it = locator.find({q.gt_image_id, q.gt_instance_id});
    require(it != locator.end(), ErrorKind::kDataIntegrity,
            "dataset: query " + std::to_string(q.query_id) +
                " references a missing instance");
    AttachedQuery aq;
    aq.instance_pos = it->second.second;
    aq.record = q;
    ds.queries_[it->second.first].push_back(std::move(aq));
  }
  return ds;
}

TrainResult
train_stage1(const TrainConfig& cfg, const DataSet& data) {
  cfg.validate();
  require(cfg.stage == 1, ErrorKind::kInvalidArgument, "train_stage1: stage mismatch");
  check_data_compat(cfg, data);

  Xoshiro256 rng(cfg.seed);
  TrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.params =
      init_model(cfg.dims, cfg.more, rng, default_log_temperature(), kDefaultBias);
  result.checkpoint.velocity.assign(value_count(result.checkpoint.params), 0.0);
  result.epoch_losses = run_epochs(cfg, data, rng, result.checkpoint.params,
                                   result.checkpoint.velocity, result.checkpoint.steps);
  return result;
}

TrainResult
train_stage2(const TrainConfig& cfg, const Checkpoint& start, const DataSet& data) {
  cfg.validate();
  require(cfg.stage == 2, ErrorKind::kInvalidArgument, "train_stage2: stage mismatch");
  check_data_compat(cfg, data);

  require_matching(start.config.dims.d_raw, cfg.dims.d_raw, "d_raw");
  require_matching(start.config.dims.d_txt, cfg.dims.d_txt, "d_txt");
  require_matching(start.config.dims.d_embed, cfg.dims.d_embed, "d_embed");
  require_matching(start.config.dims.hidden, cfg.dims.hidden, "hidden");
  require_matching(start.config.more.n_shared, cfg.more.n_shared, "n_shared");
  require_matching(start.config.more.n_routed, cfg.more.n_routed, "n_routed");
  require_matching(start.config.more.dim_in, cfg.more.dim_in, "dim_in");
  require_matching(start.config.more.dim_hidden, cfg.more.dim_hidden, "dim_hidden");
  require_matching(start.config.more.dim_out, cfg.more.dim_out, "dim_out");
  require(value_count(start.params) == start.velocity.size(), ErrorKind::kCheckpointMismatch,
          "checkpoint mismatch on optimizer state length");

  Xoshiro256 rng(cfg.seed);
  TrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.params = start.params;

  if (start.config.stage == 1) {
    // Crossing the stage boundary: routed experts and gating restart fresh,
    // momentum restarts at zero, everything else carries over bit-exact.
    for (FeedForward& expert : result.checkpoint.params.more.routed_experts) {
      expert = init_routed_expert(cfg.more, rng);
    }
    result.checkpoint.params.more.gating =
        init_affine(cfg.more.dim_in, cfg.more.n_routed, rng);
    result.checkpoint.velocity.assign(value_count(result.checkpoint.params), 0.0);
  } else {
    result.checkpoint.velocity = start.velocity;
    result.checkpoint.steps = start.steps;
  }

  result.epoch_losses = run_epochs(cfg, data, rng, result.checkpoint.params,
                                   result.checkpoint.velocity, result.checkpoint.steps);
  return result;
}

void
save_checkpoint(const Checkpoint& c, const std::string& path) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.config.stage));
  w.u64(c.config.seed);
  w.u64(c.steps);
  w.u64(static_cast<std::uint64_t>(c.config.epochs));
  w.u64(static_cast<std::uint64_t>(c.config.batch_images));
  w.f64(c.config.learning_rate);
  w.f64(c.config.momentum);
  w.f64(c.config.weight_decay);
  w.u32(static_cast<std::uint32_t>(c.config.dims.d_raw));
  w.u32(static_cast<std::uint32_t>(c.config.dims.d_txt));
  w.u32(static_cast<std::uint32_t>(c.config.dims.d_embed));
  w.u32(static_cast<std::uint32_t>(c.config.dims.hidden));
  w.u32(static_cast<std::uint32_t>(c.config.more.n_shared));
  w.u32(static_cast<std::uint32_t>(c.config.more.n_routed));
  w.u32(static_cast<std::uint32_t>(c.config.more.k_routed));
  w.u32(static_cast<std::uint32_t>(c.config.more.dim_in));
  w.u32(static_cast<std::uint32_t>(c.config.more.dim_hidden));
  w.u32(static_cast<std::uint32_t>(c.config.more.dim_out));
  w.f64(c.config.weights.w_retrieve);
  w.f64(c.config.weights.w_box);
  w.f64(c.config.weights.lambda_giou);
  w.f64(c.config.weights.lambda_l1);
  w.f64(c.config.focal.gamma);
  w.f64(c.config.focal.alpha);
  w.u8(c.config.focal.alpha_switching ? 1 : 0);
  w.u8(c.config.use_clia ? 1 : 0);

  Vec flat;
  append_values(c.params, flat);
  require(flat.size() == c.velocity.size(), ErrorKind::kCheckpointMismatch,
          "save_checkpoint: optimizer state length does not match the parameter count");
  w.u64(flat.size());
  for (const double v : flat) {
    w.f64(v);
  }
  for (const double v : c.velocity) {
    w.f64(v);
  }

  ByteWriter file;
  file.bytes(w.buffer().data(), w.buffer().size());
  file.u64(fnv1a64(w.buffer().data(), w.buffer().size()));
  write_binary_file(path, file.buffer());
}

Checkpoint
load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_binary_file(path);
  require(bytes.size() >= 8, ErrorKind::kFormatTruncated, path + ": file too short");
  const std::size_t body_size = bytes.size() - 8;

  ByteReader trailer(bytes.data() + body_size, 8);
  ByteReader r(bytes.data(), body_size);

  char magic[4];
  r.bytes(magic, 4);
  require(std::equal(magic, magic + 4, kCheckpointMagic), ErrorKind::kFormatMagic,
          path + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::kFormatVersion,
          path + ": unsupported checkpoint version " + std::to_string(version));
  require(trailer.u64() == fnv1a64(bytes.data(), body_size), ErrorKind::kFormatChecksum,
          path + ": checksum mismatch");

  Checkpoint c;
  c.config.stage = static_cast<int>(r.u32());
  c.config.seed = r.u64();
  c.steps = r.u64();
  c.config.epochs = static_cast<std::size_t>(r.u64());
  c.config.batch_images = static_cast<std::size_t>(r.u64());
  c.config.learning_rate = r.f64();
  c.config.momentum = r.f64();
  c.config.weight_decay = r.f64();
  c.config.dims.d_raw = r.u32();
  c.config.dims.d_txt = r.u32();
  c.config.dims.d_embed = r.u32();
  c.config.dims.hidden = r.u32();
  c.config.more.n_shared = r.u32();
  c.config.more.n_routed = r.u32();
  c.config.more.k_routed = r.u32();
  c.config.more.dim_in = r.u32();
  c.config.more.dim_hidden = r.u32();
  c.config.more.dim_out = r.u32();
  c.config.weights.w_retrieve = r.f64();
  c.config.weights.w_box = r.f64();
  c.config.weights.lambda_giou = r.f64();
  c.config.weights.lambda_l1 = r.f64();
  c.config.focal.gamma = r.f64();
  c.config.focal.alpha = r.f64();
  c.config.focal.alpha_switching = r.u8() != 0;
  c.config.use_clia = r.u8() != 0;

  c.params = shaped_params(c.config.dims, c.config.more);
  const std::uint64_t n_params = r.u64();
  require(n_params == value_count(c.params), ErrorKind::kDataIntegrity,
          path + ": parameter count inconsistent with the stored dimensions");
  Vec flat(n_params);
  for (double& v : flat) {
    v = r.f64();
  }
  const std::size_t consumed = read_values(c.params, flat, 0);
  require(consumed == flat.size(), ErrorKind::kDataIntegrity, path + ": parameter block drift");
  c.velocity.resize(n_params);
  for (double& v : c.velocity) {
    v = r.f64();
  }
  require(r.remaining() == 0, ErrorKind::kFormatTruncated, path + ": trailing bytes");
  return c;
}

}  // namespace reir
