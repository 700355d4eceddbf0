// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reir/model.hpp"
#include "reir/objectives.hpp"

namespace reir {

struct TrainConfig {
  int stage = 1;
  std::size_t epochs = 30;
  std::size_t batch_images = 8;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 17;
  ModelDims dims;
  MoreConfig more;
  LossWeights weights;
  FocalConfig focal;
  bool use_clia = true;  // stage-2 ablation switch

  void validate() const;
};

// Training data resolved into gallery form: images in id order, instances in
// id order within each image, queries attached to their target image.
class DataSet {
 public:
  static DataSet build(const std::vector<InstanceRecord>& instances,
                       const std::vector<QueryRecord>& queries);

  std::size_t
  n_images() const {
    return images_.size();
  }

  const std::vector<InstanceRecord>&
  image(std::size_t k) const {
    return images_[k];
  }

  std::int64_t
  image_id(std::size_t k) const {
    return image_ids_[k];
  }

  struct AttachedQuery {
    std::size_t instance_pos = 0;  // position within the target image
    QueryRecord record;
  };

  const std::vector<AttachedQuery>&
  queries_of(std::size_t k) const {
    return queries_[k];
  }

  std::size_t
  d_raw() const {
    return d_raw_;
  }

  std::size_t
  d_txt() const {
    return d_txt_;
  }

 private:
  std::vector<std::int64_t> image_ids_;
  std::vector<std::vector<InstanceRecord>> images_;
  std::vector<std::vector<AttachedQuery>> queries_;
  std::size_t d_raw_ = 0;
  std::size_t d_txt_ = 0;
};

struct Checkpoint {
  TrainConfig config;  // configuration that produced the parameters
  std::uint64_t steps = 0;
  ToyModelParams params;
  Vec velocity;  // momentum state, one entry per parameter
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> epoch_losses;  // batch-mean components per epoch
};

// Stage-1 grounding pretraining: encoders, shared experts and box head
// update under focal + box; routed experts, gating and the contrastive
// temperature/bias stay at initialization.
TrainResult train_stage1(const TrainConfig& cfg, const DataSet& data);

// Stage-2 finetuning from a stage-1 checkpoint: routed experts and gating
// restart from fresh initialization, everything else continues bit-exact;
// all parameters become trainable under the full objective.
TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& start, const DataSet& data);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace reir
