#include "homsurro/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "homsurro/descriptors/twopoint.hpp"
#include "homsurro/pipeline/optim.hpp"

namespace homsurro::pipeline {

using ndcore::Rng;
using ndcore::Tensor;
using ndcore::Var;
using seqmodel::MicroEncoding;

namespace {

constexpr std::uint64_t kInitStream = 0xA11;
constexpr std::uint64_t kShuffleStream = 0xE0;
constexpr std::uint64_t kCnnStream = 0xC0;

const micro::PhaseGrid& record_grid(const SequenceRecord& r) {
  if (!r.micro)
    throw std::invalid_argument("record " + std::to_string(r.id) +
                                " has no microstructure");
  return *r.micro;
}

void run_workers(std::size_t jobs, std::size_t count,
                 const std::function<void(std::size_t, std::size_t)>& body) {
  // fixed contiguous partition so that reductions stay order-stable
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, count));
  if (workers == 1) {
    body(0, count);
    return;
  }
  const std::size_t per = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * per;
    const std::size_t hi = std::min(count, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

bool is_validation_record(std::int64_t id) {
  return ndcore::mix64(static_cast<std::uint64_t>(id)) % 5 == 0;
}

TrainResult train(const TrainConfig& cfg,
                  const std::vector<SequenceRecord>& records,
                  const descriptors::PCABasis* basis_in,
                  std::ostream* log_stream) {
  if (records.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size < 1");
  const bool cnn_route = cfg.arch.micro == MicroEncoding::image;
  const bool pca_route = cfg.arch.micro == MicroEncoding::descriptor;

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < records.size(); ++i)
    (is_validation_record(records[i].id) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("train: degenerate train/validation split");

  std::vector<SequenceRecord> fit_set;
  fit_set.reserve(train_idx.size());
  for (std::size_t i : train_idx) fit_set.push_back(records[i]);
  const Standardizer standardizer = standardize_fit(fit_set);
  fit_set.clear();
  fit_set.shrink_to_fit();

  // microstructure descriptors (PCA route): basis from the caller or fitted
  // on the training split
  std::optional<descriptors::PCABasis> basis;
  std::vector<std::vector<double>> scores(records.size());
  if (pca_route) {
    if (basis_in) {
      basis = *basis_in;
    } else {
      std::vector<std::vector<double>> feats(train_idx.size());
      run_workers(cfg.jobs, train_idx.size(),
                  [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t i = lo; i < hi; ++i)
                      feats[i] = descriptors::matrix_autocorrelation(
                          record_grid(records[train_idx[i]]));
                  });
      basis = descriptors::pca_fit(feats, cfg.arch.micro_dim);
    }
    run_workers(cfg.jobs, records.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i)
        scores[i] = descriptors::pca_transform(
                        *basis, descriptors::matrix_autocorrelation(
                                    record_grid(records[i])))
                        .scores;
    });
  }

  auto model = seqmodel::SurrogateModel::build(cfg.arch);
  {
    Rng init_rng(ndcore::derive_seed(cfg.seed, kInitStream));
    model.init_params(init_rng);
  }
  if (!cfg.init_checkpoint.empty()) {
    const std::size_t n = load_matching_weights(cfg.init_checkpoint, model);
    if (log_stream)
      *log_stream << "initialized " << n << " tensors from "
                  << cfg.init_checkpoint << "\n";
  }

  auto all_refs = model.params();
  std::vector<ndcore::ParamRef> trainable;
  std::vector<Tensor*> trainable_ptrs;
  for (auto& r : all_refs)
    if (r.trainable) {
      trainable.push_back(r);
      trainable_ptrs.push_back(r.tensor);
    }

  Adam adam(trainable_ptrs);
  const double lr_mult = cfg.fine_tune ? 0.1 : 1.0;

  std::size_t start_epoch = 0;
  if (cfg.resume) {
    const auto resumed = load_resume_state(cfg.out_dir, model, adam);
    if (resumed) start_epoch = *resumed;
    if (log_stream && resumed)
      *log_stream << "resumed at epoch " << start_epoch << "\n";
  }

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(cfg.jobs, cfg.batch_size));
  std::vector<std::vector<Tensor>> worker_grads(workers);
  for (auto& wg : worker_grads)
    for (const Tensor* p : trainable_ptrs) wg.emplace_back(p->shape());
  std::vector<Tensor> grads;
  for (const Tensor* p : trainable_ptrs) grads.emplace_back(p->shape());

  TrainResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  result.steps = adam.steps();
  std::vector<Tensor> best_snapshot;

  // teacher-forced loss of one record on its own tape; returns the
  // per-record MSE and accumulates parameter gradients into `grad_out`
  auto record_pass = [&](const SequenceRecord& rec,
                         const std::vector<double>* rec_scores,
                         const double* bridge_desc, double* bridge_grad,
                         double inv_batch, std::size_t epoch,
                         std::vector<Tensor>& grad_out) -> double {
    Rng rec_rng(ndcore::derive_seed(cfg.seed, epoch,
                                    static_cast<std::uint64_t>(rec.id)));
    const std::size_t len =
        cfg.truncate ? truncate_length(rec_rng, rec.length()) : rec.length();
    const Tensor strain = strain_tensor(rec, &standardizer, len);
    const Tensor target = stress_tensor(rec, &standardizer, len);
    const Tensor shifted = seqmodel::shift_right(target);

    ndcore::Tape tape;
    ndcore::Binder binder(tape, true);
    Var micro_var;
    Var bridge_var;
    if (pca_route) {
      Tensor md({cfg.arch.micro_dim});
      for (std::size_t c = 0; c < cfg.arch.micro_dim; ++c)
        md[c] = (*rec_scores)[c];
      micro_var = binder.constant(std::move(md));
    } else if (cnn_route) {
      Tensor md({cfg.arch.micro_dim});
      for (std::size_t c = 0; c < cfg.arch.micro_dim; ++c)
        md[c] = bridge_desc[c];
      bridge_var = binder.input(std::move(md), true);
      micro_var = bridge_var;
    }
    Var pred = model.forward(binder, strain, shifted, micro_var, true, rec_rng);
    Var loss = ndcore::mean_sq_err(pred, binder.constant(target));
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value))
      throw TrainingDiverged("non-finite training loss at record " +
                             std::to_string(rec.id));
    tape.backward(loss, inv_batch);
    for (std::size_t p = 0; p < trainable.size(); ++p) {
      const Tensor* g = binder.grad(*trainable[p].tensor);
      if (!g) continue;
      Tensor& acc = grad_out[p];
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += (*g)[i];
    }
    if (cnn_route && bridge_grad) {
      const Tensor& g = tape.grad(bridge_var);
      for (std::size_t c = 0; c < cfg.arch.micro_dim; ++c)
        bridge_grad[c] = g.numel() ? g[c] : 0.0;
    }
    return loss_value;
  };

  // eval-mode teacher-forced MSE (validation); full-length sequences
  auto validation_mse = [&](std::size_t epoch) -> double {
    (void)epoch;
    std::vector<double> partial(val_idx.size());
    run_workers(cfg.jobs, val_idx.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const SequenceRecord& rec = records[val_idx[i]];
        const Tensor strain = strain_tensor(rec, &standardizer);
        const Tensor target = stress_tensor(rec, &standardizer);
        const Tensor shifted = seqmodel::shift_right(target);
        std::vector<double> desc;
        if (pca_route) desc = scores[val_idx[i]];
        else if (cnn_route) desc = model.cnn.descriptor(record_grid(rec));
        const Tensor pred = model.predict(strain, shifted, desc);
        double sq = 0.0;
        for (std::size_t k = 0; k < pred.numel(); ++k) {
          const double d = pred[k] - target[k];
          sq += d * d;
        }
        partial[i] = sq / static_cast<double>(pred.numel());
      }
    });
    double sum = 0.0;
    for (double v : partial) sum += v;
    return sum / static_cast<double>(val_idx.size());
  };

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    {
      Rng shuffle_rng(ndcore::derive_seed(cfg.seed, kShuffleStream, epoch));
      shuffle_rng.shuffle(order);
    }

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t base = 0; base < order.size(); base += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, order.size() - base);
      if (cnn_route && bsz < 2) break;  // batch statistics need > 1 image
      const double inv_batch = 1.0 / static_cast<double>(bsz);

      for (auto& wg : worker_grads)
        for (auto& g : wg) g.fill(0.0);

      // CNN route: one batched encoder tape (batch statistics couple the
      // records), bridged to the per-record sequence tapes through the
      // descriptor leaves
      std::optional<ndcore::Tape> cnn_tape;
      std::optional<ndcore::Binder> cnn_binder;
      Var cnn_out;
      Tensor desc_values;
      Tensor bridge_grads;
      if (cnn_route) {
        cnn_tape.emplace();
        cnn_binder.emplace(*cnn_tape, true);
        const std::size_t res = cfg.arch.cnn.input_res;
        Tensor images({bsz, 1, res, res});
        for (std::size_t j = 0; j < bsz; ++j) {
          const Tensor img =
              convnet::grid_to_image(record_grid(records[order[base + j]]));
          std::copy(img.data(), img.data() + img.numel(),
                    images.data() + j * img.numel());
        }
        Rng cnn_rng(ndcore::derive_seed(cfg.seed, kCnnStream,
                                        epoch * 1000003 + n_batches));
        cnn_out = model.cnn.forward(*cnn_binder,
                                    cnn_binder->input(std::move(images), false),
                                    true, cnn_rng);
        desc_values = cnn_tape->value(cnn_out);
        bridge_grads = Tensor({bsz, cfg.arch.micro_dim});
      }

      std::vector<double> batch_losses(bsz);
      std::exception_ptr worker_error;
      std::mutex error_mutex;
      const std::size_t active =
          std::max<std::size_t>(1, std::min(workers, bsz));
      run_workers(active, bsz, [&](std::size_t lo, std::size_t hi) {
        // worker index from the fixed partition
        const std::size_t per = (bsz + active - 1) / active;
        const std::size_t w = lo / per;
        try {
          for (std::size_t j = lo; j < hi; ++j) {
            const SequenceRecord& rec = records[order[base + j]];
            batch_losses[j] = record_pass(
                rec, pca_route ? &scores[order[base + j]] : nullptr,
                cnn_route ? desc_values.data() + j * cfg.arch.micro_dim
                          : nullptr,
                cnn_route ? bridge_grads.data() + j * cfg.arch.micro_dim
                          : nullptr,
                inv_batch, epoch, worker_grads[w]);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!worker_error) worker_error = std::current_exception();
        }
      });
      if (worker_error) std::rethrow_exception(worker_error);

      if (cnn_route) {
        // seed the encoder backward with the collected descriptor gradients:
        // d/dx sum(x . c) = c
        Var bridge_loss = ndcore::sum(
            ndcore::mul(cnn_out, cnn_binder->constant(bridge_grads)));
        cnn_tape->backward(bridge_loss, 1.0);
        for (std::size_t p = 0; p < trainable.size(); ++p) {
          const Tensor* g = cnn_binder->grad(*trainable[p].tensor);
          if (!g) continue;
          Tensor& acc = worker_grads[0][p];
          for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += (*g)[i];
        }
      }

      for (std::size_t p = 0; p < grads.size(); ++p) {
        Tensor& g = grads[p];
        g.fill(0.0);
        for (std::size_t w = 0; w < workers; ++w) {
          const Tensor& src = worker_grads[w][p];
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] += src[i];
        }
      }
      clip_global_norm(grads, cfg.clip_norm);

      double batch_loss = 0.0;
      for (double v : batch_losses) batch_loss += v;
      batch_loss *= inv_batch;
      epoch_loss += batch_loss;
      ++n_batches;

      const double lr =
          lr_schedule(adam.steps() + 1, cfg.arch.d_model, cfg.warmup_steps) *
          lr_mult;
      adam.step(grads, lr);
    }

    const double train_mse =
        n_batches ? epoch_loss / static_cast<double>(n_batches) : 0.0;
    const double val_mse = validation_mse(epoch);
    if (!std::isfinite(val_mse))
      throw TrainingDiverged("validation MSE became non-finite at epoch " +
                             std::to_string(epoch));
    result.log.push_back({epoch, train_mse, val_mse});
    if (log_stream)
      *log_stream << "epoch " << epoch << " train_mse " << train_mse
                  << " val_mse " << val_mse << "\n";

    if (val_mse < result.best_val_mse) {
      result.best_val_mse = val_mse;
      result.best_epoch = epoch;
      best_snapshot.clear();
      for (const auto& r : all_refs) best_snapshot.push_back(*r.tensor);
    }
    if (!cfg.out_dir.empty() && cfg.save_resume_every > 0 &&
        ((epoch + 1) % cfg.save_resume_every == 0 || epoch + 1 == cfg.epochs))
      save_resume_state(cfg.out_dir, model, adam, epoch + 1);
  }
  result.steps = adam.steps();

  if (!best_snapshot.empty())
    for (std::size_t i = 0; i < all_refs.size(); ++i)
      *all_refs[i].tensor = best_snapshot[i];

  if (!cfg.out_dir.empty()) {
    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.epochs = cfg.epochs;
    meta.steps = result.steps;
    meta.best_val_mse = result.best_val_mse;
    meta.note = cfg.fine_tune ? "fine-tuned" : "trained";
    save_checkpoint(cfg.out_dir, model, standardizer, basis, meta);
    result.checkpoint_dir = cfg.out_dir;
  }
  return result;
}

}  // namespace homsurro::pipeline
