// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reir/engine.hpp"
#include "reir/io.hpp"
#include "reir/synth.hpp"
#include "reir/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Stable exit-code contract: 0 success, 2 validation, 3 divergence,
// 4 checkpoint mismatch, 5 data integrity (including file corruption).
int
exit_code_for(reir::ErrorKind kind) {
  switch (kind) {
    case reir::ErrorKind::kDivergence:
      return 3;
    case reir::ErrorKind::kCheckpointMismatch:
      return 4;
    case reir::ErrorKind::kDataIntegrity:
    case reir::ErrorKind::kFormatMagic:
    case reir::ErrorKind::kFormatVersion:
    case reir::ErrorKind::kFormatTruncated:
    case reir::ErrorKind::kFormatChecksum:
      return 5;
    default:
      return 2;
  }
}

std::string
number_key(double v) {
  std::ostringstream o;
  o << v;
  return o.str();
}

std::string
hex_checksum(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct GenArgs {
  std::uint64_t seed = 17;
  std::size_t images = 200;
  std::size_t per_image = 5;
  std::size_t eval_images = 50;
  double relation_rate = 0.4;
  double noise = 0.05;
  std::string out;
};

int
run_gen(const GenArgs& a) {
  reir::SynthConfig train_cfg;
  train_cfg.seed = a.seed;
  train_cfg.n_images = a.images;
  train_cfg.instances_per_image = a.per_image;
  train_cfg.relation_rate = a.relation_rate;
  train_cfg.noise_sigma = a.noise;

  reir::SynthConfig eval_cfg = train_cfg;
  eval_cfg.seed = a.seed + 1;  // held-out gallery draws from a disjoint stream
  eval_cfg.n_images = a.eval_images;

  const reir::SynthBenchmark train = reir::generate_benchmark(train_cfg);
  const reir::SynthBenchmark eval = reir::generate_benchmark(eval_cfg);

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  reir::write_instance_file((dir / "train_instances.jsonl").string(), train.instances);
  reir::write_query_file((dir / "train_queries.jsonl").string(), train.queries);
  reir::write_instance_file((dir / "eval_instances.jsonl").string(), eval.instances);
  reir::write_query_file((dir / "eval_queries.jsonl").string(), eval.queries);

  std::printf("train: %zu images, %zu instances, %zu queries (seed %llu)\n", a.images,
              train.instances.size(), train.queries.size(),
              static_cast<unsigned long long>(train_cfg.seed));
  std::printf("eval:  %zu images, %zu instances, %zu queries (seed %llu)\n", a.eval_images,
              eval.instances.size(), eval.queries.size(),
              static_cast<unsigned long long>(eval_cfg.seed));
  return 0;
}

struct TrainArgs {
  int stage = 1;
  std::string data;
  std::string out;
  std::string from;
  long long epochs = -1;  // -1 picks the stage default (30 / 1500)
  std::size_t batch = 8;
  double lr = -1.0;  // <0 picks the stage default (1e-2 / 3e-3)
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 17;
  bool no_clia = false;
  long long routed = -1;  // -1 keeps the default expert count active
};

int
run_train(const TrainArgs& a) {
  reir::require(a.stage != 2 || !a.from.empty(), reir::ErrorKind::kInvalidArgument,
                "train: --stage 2 requires --from <checkpoint>");

  reir::TrainConfig cfg;
  cfg.stage = a.stage;
  cfg.epochs = a.epochs < 0 ? (a.stage == 1 ? 30 : 1500) : static_cast<std::size_t>(a.epochs);
  cfg.batch_images = a.batch;
  cfg.learning_rate = a.lr < 0.0 ? (a.stage == 1 ? 1e-2 : 3e-3) : a.lr;
  cfg.momentum = a.momentum;
  cfg.weight_decay = a.weight_decay;
  cfg.seed = a.seed;
  cfg.use_clia = !a.no_clia;
  if (a.routed >= 0) {
    cfg.more.k_routed = static_cast<std::size_t>(a.routed);
  }

  const fs::path dir(a.data);
  const auto instances = reir::read_instance_file((dir / "train_instances.jsonl").string());
  const auto queries = reir::read_query_file((dir / "train_queries.jsonl").string());
  const reir::DataSet data = reir::DataSet::build(instances, queries);

  reir::TrainResult result;
  if (a.stage == 1) {
    result = reir::train_stage1(cfg, data);
  } else {
    result = reir::train_stage2(cfg, reir::load_checkpoint(a.from), data);
  }

  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    const reir::LossBreakdown& b = result.epoch_losses[e];
    std::printf("epoch %zu/%zu total %.9g clia %.9g focal %.9g box_giou %.9g box_l1 %.9g\n",
                e + 1, cfg.epochs, b.total, b.clia, b.focal, b.box_giou, b.box_l1);
  }

  reir::save_checkpoint(result.checkpoint, a.out);
  std::printf("checkpoint written: %s (stage %d, %llu steps)\n", a.out.c_str(), cfg.stage,
              static_cast<unsigned long long>(result.checkpoint.steps));
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string split = "eval";
  std::string ckpt;
  std::string index_path;
  std::string save_index;
  std::string out;
  std::string subset = "all";
  std::vector<std::size_t> ks{1, 5, 10};
  std::vector<double> taus{0.5, 0.7, 0.9};
  bool strict = false;
  bool gt_features = false;
  bool pretty = false;
};

template <typename T>
void
sort_unique(std::vector<T>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

json
report_to_json(const reir::MetricReport& rep, const reir::EvalSpec& spec,
               std::uint64_t checksum, const EvalArgs& a, const json& ckpt_echo) {
  json j;
  j["subset"] = a.subset;
  j["identity_mode"] = spec.identity_mode == reir::IdentityMode::kStrict ? "strict" : "iou";
  j["gt_features"] = a.gt_features;
  j["n_queries"] = rep.n_queries;
  j["index_checksum"] = hex_checksum(checksum);
  j["ks"] = spec.ks;
  j["taus"] = spec.taus;
  if (!ckpt_echo.is_null()) {
    j["checkpoint"] = ckpt_echo;
  }
  json recall = json::object();
  for (const auto& [k, v] : rep.recall_at_k) {
    recall[std::to_string(k)] = v;
  }
  j["recall_at_k"] = recall;
  json precision = json::object();
  for (const auto& [tau, v] : rep.precision_at_iou) {
    precision[number_key(tau)] = v;
  }
  j["precision_at_iou"] = precision;
  json br = json::object();
  for (const std::size_t k : spec.ks) {
    json row = json::object();
    for (const double tau : spec.taus) {
      row[number_key(tau)] = rep.box_recall.at({k, tau});
    }
    br[std::to_string(k)] = row;
  }
  j["box_recall_at_k"] = br;
  return j;
}

void
print_pretty(const reir::MetricReport& rep, const reir::EvalSpec& spec, const EvalArgs& a,
             std::uint64_t checksum) {
  std::printf("identity=%s subset=%s queries=%zu checksum=%s\n",
              spec.identity_mode == reir::IdentityMode::kStrict ? "strict" : "iou",
              a.subset.c_str(), rep.n_queries, hex_checksum(checksum).c_str());
  std::printf("%-8s", "");
  for (const double tau : spec.taus) {
    std::printf("  tau=%-6g", tau);
  }
  std::printf("\n");
  for (const std::size_t k : spec.ks) {
    std::printf("BR@%-5zu", k);
    for (const double tau : spec.taus) {
      std::printf("  %-10.4f", rep.box_recall.at({k, tau}));
    }
    std::printf("\n");
  }
  std::printf("R@k    ");
  for (const std::size_t k : spec.ks) {
    std::printf("  R@%zu=%.4f", k, rep.recall_at_k.at(k));
  }
  std::printf("\nP@tau  ");
  for (const double tau : spec.taus) {
    std::printf("  P@%g=%.4f", tau, rep.precision_at_iou.at(tau));
  }
  std::printf("\n");
}

int
run_eval(EvalArgs a) {
  const fs::path dir(a.data);
  auto instances = reir::read_instance_file((dir / (a.split + "_instances.jsonl")).string());
  auto queries = reir::read_query_file((dir / (a.split + "_queries.jsonl")).string());

  if (a.subset == "relation") {
    std::erase_if(queries, [](const reir::QueryRecord& q) { return !q.relation_dependent; });
  } else if (a.subset == "attribute") {
    std::erase_if(queries, [](const reir::QueryRecord& q) { return q.relation_dependent; });
  }
  reir::require(!queries.empty(), reir::ErrorKind::kInvalidArgument,
                "eval: no queries left after subset selection");

  sort_unique(a.ks);
  sort_unique(a.taus);
  reir::EvalSpec spec;
  spec.ks = a.ks;
  spec.taus = a.taus;
  spec.identity_mode = a.strict ? reir::IdentityMode::kStrict : reir::IdentityMode::kIou;

  json ckpt_echo;
  if (a.gt_features) {
    // Oracle mode: every instance gets a distinct one-hot feature, every
    // query the one-hot of its target, and predictions equal annotations.
    // Retrieval is then exact by construction, the protocol's upper bound.
    std::vector<std::pair<std::int64_t, std::int64_t>> order;
    order.reserve(instances.size());
    for (const auto& rec : instances) {
      order.emplace_back(rec.image_id, rec.instance_id);
    }
    std::sort(order.begin(), order.end());
    std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> slot;
    for (std::size_t i = 0; i < order.size(); ++i) {
      slot[order[i]] = i;
    }
    for (auto& rec : instances) {
      rec.feature.assign(instances.size(), 0.0);
      rec.feature[slot.at({rec.image_id, rec.instance_id})] = 1.0;
      rec.box = rec.gt_box;
    }
    for (auto& q : queries) {
      const auto it = slot.find({q.gt_image_id, q.gt_instance_id});
      reir::require(it != slot.end(), reir::ErrorKind::kDataIntegrity,
                    "eval: query " + std::to_string(q.query_id) +
                        " references a missing instance");
      q.t_refined.assign(instances.size(), 0.0);
      q.t_refined[it->second] = 1.0;
    }
  } else {
    reir::require(!a.ckpt.empty(), reir::ErrorKind::kInvalidArgument,
                  "eval: provide --ckpt (or --gt-features)");
    const reir::Checkpoint ckpt = reir::load_checkpoint(a.ckpt);
    const std::size_t k_eff =
        ckpt.config.stage == 1 ? 0 : ckpt.config.more.k_routed;
    ckpt_echo = {{"stage", ckpt.config.stage},
                 {"seed", ckpt.config.seed},
                 {"k_routed", ckpt.config.more.k_routed},
                 {"use_clia", ckpt.config.use_clia},
                 {"steps", ckpt.steps}};

    if (a.index_path.empty()) {
      for (auto& rec : instances) {
        reir::EncodedInstance enc = reir::encode_instance(ckpt.params, rec.raw);
        rec.feature = std::move(enc.feature);
        rec.box = enc.box;
      }
    }
    for (auto& q : queries) {
      q.t_refined = reir::encode_expression(ckpt.params, q.raw, k_eff);
    }
  }

  const reir::GalleryIndex index = !a.gt_features && !a.index_path.empty()
                                       ? reir::GalleryIndex::load(a.index_path)
                                       : reir::GalleryIndex::build(instances, a.gt_features);

  if (!a.save_index.empty()) {
    index.save(a.save_index);
  }

  const reir::MetricReport rep = reir::evaluate_benchmark(index, queries, spec);
  const json j = report_to_json(rep, spec, index.checksum(), a, ckpt_echo);
  const std::string text = j.dump(2) + "\n";
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::binary);
    reir::require(static_cast<bool>(out), reir::ErrorKind::kInvalidArgument,
                  "eval: cannot open " + a.out);
    out << text;
  } else if (!a.pretty) {
    std::fputs(text.c_str(), stdout);
  }
  if (a.pretty) {
    print_pretty(rep, spec, a, index.checksum());
  }
  return 0;
}

}  // namespace

int
main(int argc, char** argv) {
  CLI::App app{"referring-expression instance retrieval workbench"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "generate a synthetic benchmark");
  cmd_gen->add_option("--seed", gen.seed, "master seed");
  cmd_gen->add_option("--images", gen.images, "training gallery image count");
  cmd_gen->add_option("--per-image", gen.per_image, "instances per image");
  cmd_gen->add_option("--eval-images", gen.eval_images, "held-out gallery image count");
  cmd_gen->add_option("--relation-rate", gen.relation_rate,
                      "fraction of queries needing neighborhood context");
  cmd_gen->add_option("--noise", gen.noise, "query embedding noise sigma");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "run one training stage");
  cmd_train->add_option("--stage", train.stage, "1 = grounding pretrain, 2 = full finetune")
      ->check(CLI::IsMember({1, 2}));
  cmd_train->add_option("--data", train.data, "benchmark directory")->required();
  cmd_train->add_option("--out", train.out, "checkpoint output path")->required();
  cmd_train->add_option("--from", train.from, "checkpoint to continue from (stage 2)");
  cmd_train->add_option("--epochs", train.epochs, "epoch count (default 30 / 1500 by stage)");
  cmd_train->add_option("--batch", train.batch, "images per batch");
  cmd_train->add_option("--lr", train.lr, "learning rate (default 1e-2 / 3e-3 by stage)");
  cmd_train->add_option("--momentum", train.momentum, "momentum coefficient");
  cmd_train->add_option("--weight-decay", train.weight_decay, "weight decay");
  cmd_train->add_option("--seed", train.seed, "training seed");
  cmd_train->add_flag("--no-clia", train.no_clia, "drop the contrastive term in stage 2");
  cmd_train->add_option("--routed", train.routed, "active routed experts per query");

  EvalArgs eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score a gallery and report metrics");
  cmd_eval->add_option("--data", eval.data, "benchmark directory")->required();
  cmd_eval->add_option("--split", eval.split, "which split to score")
      ->check(CLI::IsMember({"train", "eval"}));
  CLI::Option* opt_ckpt = cmd_eval->add_option("--ckpt", eval.ckpt, "checkpoint to evaluate");
  cmd_eval->add_option("--index", eval.index_path, "prebuilt gallery index")->needs(opt_ckpt);
  cmd_eval->add_option("--save-index", eval.save_index, "write the gallery index here");
  cmd_eval->add_option("--out", eval.out, "report path (stdout if omitted)");
  cmd_eval->add_option("--subset", eval.subset, "query subset")
      ->check(CLI::IsMember({"all", "relation", "attribute"}));
  cmd_eval->add_option("--k", eval.ks, "retrieval cutoffs")->delimiter(',');
  cmd_eval->add_option("--iou", eval.taus, "localization thresholds")->delimiter(',');
  cmd_eval->add_flag("--strict", eval.strict, "require instance identity, not just overlap");
  cmd_eval->add_flag("--gt-features", eval.gt_features, "oracle features and boxes")
      ->excludes(opt_ckpt);
  cmd_eval->add_flag("--pretty", eval.pretty, "print a human-readable table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd_gen->parsed()) {
      return run_gen(gen);
    }
    if (cmd_train->parsed()) {
      return run_train(train);
    }
    return run_eval(eval);
  } catch (const reir::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
