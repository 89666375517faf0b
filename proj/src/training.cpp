#include "h2o/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "h2o/checkpoint.hpp"

namespace h2o {

namespace fs = std::filesystem;

std::string TrainConfig::validate(bool decoder_enabled) const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (lr <= 0.0) throw ValidationError("train: lr must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("train: loss weights must be >= 0");
  if (stage_mode == StageMode::two_stage && !decoder_enabled)
    throw ValidationError("train: two-stage mode requires the decoder branch");
  if (stage_mode == StageMode::two_stage && lambda1 == 0.0)
    throw ValidationError("train: two-stage stage 1 needs lambda1 > 0");
  if (lambda1 > 0.0 && !decoder_enabled)
    throw ValidationError("train: lambda1 > 0 needs the decoder branch (set lambda1 = 0)");
  if (lambda1 == 0.0 && decoder_enabled)
    return "lambda1 = 0 with the decoder on: reconstruction term detached, decoder skipped";
  return "";
}

MetricsReport evaluate(Model& model, const DatasetManifest& manifest, Split side) {
  const std::vector<std::size_t> idx =
      manifest.split.empty()
          ? [&] {
              std::vector<std::size_t> all(manifest.sequences.size());
              for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
              return all;
            }()
          : manifest.indices(side);
  if (idx.empty()) throw ValidationError("evaluate: empty dataset for the requested split");
  NoGradGuard guard;
  std::vector<int> preds, labels;
  preds.reserve(idx.size());
  for (std::size_t i : idx) {
    const NdArray input =
        prepare_input(manifest.sequences[i], model.topology(), model.config().temporal_len);
    ForwardOutput out = model.forward(input, Mode::eval, nullptr, /*with_reconstruction=*/false);
    preds.push_back(out.probability.scalar() >= 0.5 ? 1 : 0);
    labels.push_back(manifest.sequences[i].label);
  }
  return compute_metrics(preds, labels);
}

namespace {

struct Phase {
  bool use_rec = false;
  bool use_cls = false;
  std::size_t epochs = 0;
};

TrainResult run_training(Model& model, const DatasetManifest& manifest, const TrainConfig& config,
                         const std::vector<Phase>& phases, const std::string& out_dir,
                         const TrainHooks& hooks) {
  const std::string warning = config.validate(model.config().decoder_enabled());
  auto log = [&](const std::string& msg) {
    if (hooks.log) hooks.log(msg);
  };
  if (!warning.empty()) log("warning: " + warning);

  std::vector<std::size_t> train_idx = manifest.indices(Split::train);
  if (manifest.split.empty())
    throw ValidationError("train: subject split not prepared (run split_by_subject)");
  if (train_idx.empty()) throw ValidationError("train: empty training split");
  const bool has_val = !manifest.indices(Split::test).empty();

  std::vector<NdArray> prepared(manifest.sequences.size());
  std::vector<int> labels(manifest.sequences.size());
  for (std::size_t i = 0; i < manifest.sequences.size(); ++i) {
    prepared[i] =
        prepare_input(manifest.sequences[i], model.topology(), model.config().temporal_len);
    labels[i] = manifest.sequences[i].label;
  }

  const bool writing = !out_dir.empty();
  std::ofstream csv;
  if (writing) {
    fs::create_directories(out_dir);
    csv.open(fs::path(out_dir) / "metrics.csv");
    csv << epoch_csv_header() << "\n";
  }
  auto write_checkpoint = [&](const std::string& name) {
    if (!writing) return;
    save_checkpoint((fs::path(out_dir) / name).string(), model.parameters(),
                    {model.config().dtype, model.seed(), model.parameter_count()});
  };

  Rng shuffle_rng(Rng::derive(config.seed, "train.shuffle"));
  Rng mask_rng(Rng::derive(config.seed, "train.mask"));
  const LrSchedule schedule = config.schedule();

  // Snapshot after every clean epoch so a NaN abort can save pre-divergence
  // weights.
  auto snapshot = [&]() {
    std::vector<NdArray> values;
    values.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) values.push_back(p.tensor.value());
    return values;
  };
  std::vector<NdArray> last_good = snapshot();

  TrainResult result;
  std::size_t global_epoch = 0;
  std::size_t steps_seen = 0;

  for (const Phase& phase : phases) {
    const bool run_rec = phase.use_rec && config.lambda1 > 0.0;
    for (std::size_t e = 0; e < phase.epochs; ++e, ++global_epoch) {
      const double lr = schedule.at_epoch(global_epoch);
      std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng.engine());

      double sum_rec = 0.0, sum_cls = 0.0, sum_total = 0.0;
      std::size_t batches = 0;
      std::vector<int> train_preds, train_labels;
      EpochRecord rec;

      try {
        for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
          const std::size_t stop = std::min(start + config.batch_size, train_idx.size());
          zero_grads(model.parameters());

          Tensor l_rec_t, l_cls_t, total;
          std::vector<Tensor> probs, xhats;
          std::vector<NdArray> targets;
          std::vector<int> batch_labels;
          for (std::size_t bi = start; bi < stop; ++bi) {
            const std::size_t i = train_idx[bi];
            ForwardOutput out = model.forward(prepared[i], Mode::train, &mask_rng, run_rec);
            probs.push_back(out.probability);
            batch_labels.push_back(labels[i]);
            train_preds.push_back(out.probability.scalar() >= 0.5 ? 1 : 0);
            train_labels.push_back(labels[i]);
            if (run_rec) {
              xhats.push_back(out.reconstruction);
              targets.push_back(prepared[i]);
            }
          }
          if (run_rec) l_rec_t = loss_rec(xhats, targets);
          if (phase.use_cls) l_cls_t = loss_cls(probs, batch_labels);
          if (phase.use_cls && run_rec)
            total = combined_loss(l_rec_t, l_cls_t, config.lambda1, config.lambda2);
          else if (run_rec)
            total = scale(l_rec_t, config.lambda1);
          else
            total = scale(l_cls_t, config.lambda2);
          if (!std::isfinite(total.scalar())) throw NumericError("train: non-finite loss");

          const double loss_value = total.scalar();
          backward(total);
          sgd_step(model.parameters(), lr);

          if (steps_seen < 3) result.first_step_losses.push_back(loss_value);
          ++steps_seen;
          sum_total += loss_value;
          if (run_rec) sum_rec += l_rec_t.scalar();
          if (phase.use_cls) sum_cls += l_cls_t.scalar();
          ++batches;
        }

        rec.epoch = global_epoch;
        rec.l_rec = run_rec ? sum_rec / static_cast<double>(batches) : 0.0;
        rec.l_cls = phase.use_cls ? sum_cls / static_cast<double>(batches) : 0.0;
        rec.l_total = sum_total / static_cast<double>(batches);
        rec.lr = lr;
        rec.train_acc = compute_metrics(train_preds, train_labels).accuracy;
        if (has_val) {
          MetricsReport val = evaluate(model, manifest, Split::test);
          rec.val_acc = val.accuracy;
          rec.val_f1_micro = val.f1_micro;
          rec.val_f1_positive = val.f1_positive;
          rec.val_f1_macro = val.f1_macro;
        }
      } catch (const NumericError& e) {
        for (std::size_t i = 0; i < last_good.size(); ++i)
          model.parameters()[i].tensor.value() = last_good[i];
        write_checkpoint("last_good.ckpt.json");
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(global_epoch) +
                           " batch " + std::to_string(batches) +
                           (writing ? " (last good checkpoint saved)" : ""));
      }
      last_good = snapshot();
      result.report.curve.push_back(rec);
      if (writing) csv << epoch_csv_row(rec) << "\n";

      if (run_rec && phase.use_cls && rec.l_cls > 0.0) {
        std::ostringstream os;
        os << "epoch " << global_epoch << " balance lambda1*L_rec : lambda2*L_cls = "
           << config.lambda1 * rec.l_rec << " : " << config.lambda2 * rec.l_cls;
        if (global_epoch == 0) {
          const double suggestion = suggest_lambda1(rec.l_rec, rec.l_cls);
          if (suggestion != 1.0)
            os << " (suggested lambda1 = " << suggestion << " for same order of magnitude)";
        }
        log(os.str());
      }
      if (global_epoch == 0) result.initial_l_rec = rec.l_rec;
      result.final_l_rec = rec.l_rec;
      result.final_l_cls = rec.l_cls;
      result.final_train_acc = rec.train_acc;

      for (std::size_t ms : config.lr_milestones)
        if (ms == global_epoch + 1)
          write_checkpoint("milestone_epoch" + std::to_string(global_epoch) + ".ckpt.json");
      if (hooks.on_epoch) hooks.on_epoch(global_epoch);
    }
  }

  write_checkpoint("final.ckpt.json");
  if (has_val) {
    MetricsReport final_val = evaluate(model, manifest, Split::test);
    final_val.curve = std::move(result.report.curve);
    result.report = std::move(final_val);
  }
  if (writing) {
    std::ofstream report(fs::path(out_dir) / "report.json");
    report << result.report.to_json();
  }
  return result;
}

}  // namespace

TrainResult train_one_stage(Model& model, const DatasetManifest& manifest,
                            const TrainConfig& config, const std::string& out_dir,
                            const TrainHooks& hooks) {
  if (config.stage_mode != StageMode::one_stage)
    throw ValidationError("train_one_stage: config requests two-stage mode");
  Phase phase;
  phase.use_rec = model.config().decoder_enabled() && config.lambda1 > 0.0;
  phase.use_cls = true;
  phase.epochs = config.epochs;
  return run_training(model, manifest, config, {phase}, out_dir, hooks);
}

TrainResult train_two_stage(Model& model, const DatasetManifest& manifest,
                            const TrainConfig& config, const std::string& out_dir,
                            const TrainHooks& hooks) {
  if (config.stage_mode != StageMode::two_stage)
    throw ValidationError("train_two_stage: config requests one-stage mode");
  const std::size_t stage1 =
      config.stage1_epochs > 0 ? config.stage1_epochs : config.epochs / 2;
  if (stage1 >= config.epochs)
    throw ValidationError("train: stage1_epochs must leave room for stage 2");
  Phase rec_phase{/*use_rec=*/true, /*use_cls=*/false, stage1};
  Phase cls_phase{/*use_rec=*/false, /*use_cls=*/true, config.epochs - stage1};
  return run_training(model, manifest, config, {rec_phase, cls_phase}, out_dir, hooks);
}

const std::vector<VariantSpec>& ablation_variants() {
  static const std::vector<VariantSpec> variants = {
      {"BL", false, false, false, false, 0.0, StageMode::one_stage},
      {"BL+HG", true, false, false, false, 0.0, StageMode::one_stage},
      {"BL+HG+EH", true, true, false, false, 0.0, StageMode::one_stage},
      {"BL+HG+DB", true, false, true, true, 0.0, StageMode::one_stage},
      {"BL+HG+EH+DB", true, true, true, false, 0.0, StageMode::two_stage},
      {"Masked", true, true, true, true, 0.3, StageMode::one_stage},
      {"Full", true, true, true, true, 0.0, StageMode::one_stage},
  };
  return variants;
}

const VariantSpec& variant_by_id(const std::string& id) {
  for (const auto& v : ablation_variants())
    if (v.id == id) return v;
  std::string known;
  for (const auto& v : ablation_variants()) known += (known.empty() ? "" : ", ") + v.id;
  throw ValidationError("unknown variant '" + id + "' (known: " + known + ")");
}

ModelConfig apply_variant(ModelConfig base, const VariantSpec& v) {
  base.use_hypergraph = v.hypergraph;
  base.use_enhanced_hyperedge = v.enhanced_hyperedge;
  base.use_decoder = v.decoder_branch;
  base.masking_rate = v.masking_rate;
  return base;
}

TrainConfig apply_variant(TrainConfig base, const VariantSpec& v) {
  base.stage_mode = v.stage_mode;
  if (!v.decoder_branch) base.lambda1 = 0.0;
  return base;
}

std::vector<AblationRow> run_ablation_matrix(const DatasetManifest& manifest,
                                             const ModelConfig& base_model,
                                             const TrainConfig& base_train,
                                             const TrainHooks& hooks) {
  std::vector<AblationRow> rows;
  for (const VariantSpec& v : ablation_variants()) {
    if (hooks.log) hooks.log("ablation: training variant " + v.id);
    ModelConfig mc = apply_variant(base_model, v);
    TrainConfig tc = apply_variant(base_train, v);
    Model model(mc, manifest.topology, tc.seed);
    TrainResult result = tc.stage_mode == StageMode::two_stage
                             ? train_two_stage(model, manifest, tc, "", hooks)
                             : train_one_stage(model, manifest, tc, "", hooks);
    AblationRow row;
    row.spec = v;
    row.metrics = result.report;
    row.final_l_rec = result.final_l_rec;
    row.final_l_cls = result.final_l_cls;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string epoch_csv_header() {
  return "epoch,l_rec,l_cls,l_total,lr,train_acc,val_acc,val_f1_micro,val_f1_positive,"
         "val_f1_macro";
}

std::string epoch_csv_row(const EpochRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.epoch << "," << r.l_rec << "," << r.l_cls << "," << r.l_total << "," << r.lr << ","
     << r.train_acc << "," << r.val_acc << "," << r.val_f1_micro << "," << r.val_f1_positive
     << "," << r.val_f1_macro;
  return os.str();
}

}  // namespace h2o
