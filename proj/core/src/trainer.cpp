#include "dpt/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::trainer {

using hourglass::Checkpoint;
using hourglass::Method;

OptimConfig OptimConfig::paper() {
  OptimConfig c;
  c.warmup_steps = 4000;
  c.total_steps = 200000;
  c.chunk_len = 2048;
  c.val_window = 2048;
  c.val_step = 512;
  return c;
}

void OptimConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must be in (0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(clip > 0)) throw ConfigError("clip must be positive");
  if (total_steps == 0 || warmup_steps == 0) throw ConfigError("total_steps and warmup_steps must be positive");
  if (warmup_steps > total_steps) throw ConfigError("warmup_steps must not exceed total_steps");
  if (batch == 0 || chunk_len == 0) throw ConfigError("batch and chunk_len must be positive");
  if (log_every == 0) throw ConfigError("log_every must be positive");
  if (!(entropy_warm_start >= 0 && entropy_warm_start <= 1)) throw ConfigError("entropy_warm_start must be in [0, 1]");
  if (val_window == 0 || val_step == 0 || val_step > val_window) {
    throw ConfigError("validation needs 0 < val_step <= val_window");
  }
}

const std::vector<std::string>& OptimConfig::keys() {
  static const std::vector<std::string> k = {
      "lr",       "beta1", "beta2",    "eps",       "clip",       "warmup_steps",       "total_steps",
      "batch",    "chunk_len", "seed", "log_every", "val_every",  "entropy_warm_start", "val_window",
      "val_step", "val_windows"};
  return k;
}

bool OptimConfig::set(const std::string& key, const std::string& v) {
  if (key == "lr") lr = parse_number<double>(key, v);
  else if (key == "beta1") beta1 = parse_number<double>(key, v);
  else if (key == "beta2") beta2 = parse_number<double>(key, v);
  else if (key == "eps") eps = parse_number<double>(key, v);
  else if (key == "clip") clip = parse_number<double>(key, v);
  else if (key == "warmup_steps") warmup_steps = parse_number<std::size_t>(key, v);
  else if (key == "total_steps") total_steps = parse_number<std::size_t>(key, v);
  else if (key == "batch") batch = parse_number<std::size_t>(key, v);
  else if (key == "chunk_len") chunk_len = parse_number<std::size_t>(key, v);
  else if (key == "seed") seed = parse_number<std::size_t>(key, v);
  else if (key == "log_every") log_every = parse_number<std::size_t>(key, v);
  else if (key == "val_every") val_every = parse_number<std::size_t>(key, v);
  else if (key == "entropy_warm_start") entropy_warm_start = parse_number<double>(key, v);
  else if (key == "val_window") val_window = parse_number<std::size_t>(key, v);
  else if (key == "val_step") val_step = parse_number<std::size_t>(key, v);
  else if (key == "val_windows") val_windows = parse_number<std::size_t>(key, v);
  else return false;
  return true;
}

std::string OptimConfig::serialize() const {
  std::ostringstream o;
  o << "lr = " << format_double(lr) << "\nbeta1 = " << format_double(beta1) << "\nbeta2 = " << format_double(beta2)
    << "\neps = " << format_double(eps) << "\nclip = " << format_double(clip) << "\nwarmup_steps = " << warmup_steps
    << "\ntotal_steps = " << total_steps << "\nbatch = " << batch << "\nchunk_len = " << chunk_len
    << "\nseed = " << seed << "\nlog_every = " << log_every << "\nval_every = " << val_every
    << "\nentropy_warm_start = " << format_double(entropy_warm_start) << "\nval_window = " << val_window
    << "\nval_step = " << val_step << "\nval_windows = " << val_windows << "\n";
  return o.str();
}

std::size_t OptimConfig::validation_interval() const {
  if (val_every) return val_every;
  return std::max<std::size_t>(1, total_steps / 20);
}

double lr_at(std::size_t step, const OptimConfig& cfg) {
  if (step < 1 || step > cfg.total_steps) {
    throw UsageError("lr_at: step " + std::to_string(step) + " outside [1, " + std::to_string(cfg.total_steps) + "]");
  }
  if (step <= cfg.warmup_steps) return cfg.lr * double(step) / double(cfg.warmup_steps);
  const double progress = double(step - cfg.warmup_steps) / double(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double clip_grad_norm(ad::ParameterSet<T>& params, double clip) {
  double sq = 0;
  for (auto& p : params.items()) {
    if (!p.trainable) continue;
    for (T g : p.var.grad_buffer().values()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > clip) {
    const T s = static_cast<T>(clip / norm);
    for (auto& p : params.items()) {
      if (!p.trainable) continue;
      for (T& g : p.var.grad_buffer().values()) g *= s;
    }
  }
  return norm;
}

template <typename T>
Adam<T>::Adam(const ad::ParameterSet<T>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::step(ad::ParameterSet<T>& params, double lr) {
  if (params.size() != m_.size()) throw InternalError("Adam state does not match the parameter set");
  ++t_;
  const double c1 = 1 - std::pow(beta1_, double(t_));
  const double c2 = 1 - std::pow(beta2_, double(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1 / c2);
  const T eps = static_cast<T>(eps_);
  auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].trainable) continue;
    auto& w = items[i].var.mutable_value();
    const auto& g = items[i].var.grad_buffer();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

template <typename T>
void Adam<T>::store(Checkpoint& ckpt, const ad::ParameterSet<T>& params) const {
  const auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ckpt.blobs.emplace_back("adam.m." + items[i].name, m_[i].template cast<float>());
    ckpt.blobs.emplace_back("adam.v." + items[i].name, v_[i].template cast<float>());
  }
}

template <typename T>
void Adam<T>::restore(const Checkpoint& ckpt, const ad::ParameterSet<T>& params, std::size_t steps) {
  const auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Array<float>* m = ckpt.find("adam.m." + items[i].name);
    const Array<float>* v = ckpt.find("adam.v." + items[i].name);
    if (!m || !v) throw DataError("checkpoint has no optimizer state for '" + items[i].name + "'");
    if (m->shape() != items[i].var.shape() || v->shape() != items[i].var.shape()) {
      throw DataError("optimizer state for '" + items[i].name + "' has the wrong shape");
    }
    m_[i] = m->template cast<T>();
    v_[i] = v->template cast<T>();
  }
  t_ = steps;
}

namespace {

std::string describe_probs(const ad::Var<float>& b_hat) {
  if (!b_hat.defined()) return "no boundary predictor";
  const auto& v = b_hat.value();
  double lo = 1, hi = 0, sum = 0;
  std::size_t bad = 0;
  for (float x : v.values()) {
    if (!std::isfinite(x)) {
      ++bad;
      continue;
    }
    lo = std::min(lo, double(x));
    hi = std::max(hi, double(x));
    sum += x;
  }
  std::ostringstream o;
  o << "b_hat min " << lo << " max " << hi << " mean " << sum / double(std::max<std::size_t>(1, v.size() - bad))
    << " non-finite " << bad << " of " << v.size();
  return o.str();
}

std::string metrics_row(const StepMetrics& m) {
  std::ostringstream o;
  o << m.step << "," << format_double(m.lr) << "," << format_double(m.loss_total) << ","
    << format_double(m.loss_lm_bits) << "," << format_double(m.loss_aux) << "," << format_double(m.sf) << ","
    << format_double(m.grad_norm) << "," << format_double(m.wall_ms) << "\n";
  return o.str();
}

}  // namespace

Trainer::Trainer(const hourglass::ModelConfig& model_cfg, const OptimConfig& optim, TrainData data,
                 std::filesystem::path run_dir)
    : model_cfg_(model_cfg),
      optim_(optim),
      data_(std::move(data)),
      run_dir_(std::move(run_dir)),
      model_(model_cfg, optim.seed),
      adam_(model_.params(), optim.beta1, optim.beta2, optim.eps),
      rng_(optim.seed ^ 0x9e3779b97f4a7c15ull) {
  optim_.validate();
  std::string missing;
  if (data_.train.size() < optim_.chunk_len + 1) {
    missing += " training stream of at least chunk_len + 1 tokens (run `dpt preprocess`);";
  }
  if (data_.valid.size() < 2) missing += " validation stream (run `dpt preprocess`);";
  if (model_cfg_.method == Method::kUnigram && data_.train_gold.size() != data_.train.size()) {
    missing += " unigram teacher boundaries (run `dpt train-unigram`);";
  }
  if (!missing.empty()) throw DataError("training is missing:" + missing);
  if (model_cfg_.method == Method::kUnigram) gold_stream_.assign(data_.train_gold.begin(), data_.train_gold.end());
  chunks_per_epoch_ = data_.train.size() / (optim_.chunk_len + 1);
  std::filesystem::create_directories(run_dir_ / "checkpoints");
}

const std::vector<corpus::Chunk>& Trainer::epoch_chunks(const std::vector<std::int32_t>& stream,
                                                        std::uint64_t epoch, std::vector<corpus::Chunk>& cache,
                                                        std::uint64_t& cached) const {
  if (cached != epoch) {
    cache = corpus::chunk_epoch(stream, optim_.chunk_len + 1, epoch, optim_.seed);
    cached = epoch;
  }
  return cache;
}

Trainer::Batch Trainer::next_batch() {
  const std::size_t B = optim_.batch, L = optim_.chunk_len;
  Batch b;
  b.inputs.reserve(B * L);
  b.targets.reserve(B * L);
  const bool unigram = model_cfg_.method == Method::kUnigram;
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t g = step_ * B + i;
    const std::uint64_t epoch = g / chunks_per_epoch_;
    const auto& chunk = epoch_chunks(data_.train, epoch, chunks_, chunk_epoch_)[g % chunks_per_epoch_];
    b.inputs.insert(b.inputs.end(), chunk.begin(), chunk.begin() + static_cast<long>(L));
    b.targets.insert(b.targets.end(), chunk.begin() + 1, chunk.end());
    if (unigram) {
      const auto& gc = epoch_chunks(gold_stream_, epoch, gold_chunks_, gold_epoch_)[g % chunks_per_epoch_];
      b.gold.insert(b.gold.end(), gc.begin(), gc.begin() + static_cast<long>(L));
    }
  }
  return b;
}

StepMetrics Trainer::step() {
  if (step_ >= optim_.total_steps) throw UsageError("training already finished");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t B = optim_.batch, L = optim_.chunk_len;
  Batch batch = next_batch();

  hourglass::ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng_;
  auto fwd = model_.forward(batch.inputs, B, L, opts);

  if (model_cfg_.method == Method::kEntropy) {
    const bool warm = double(step_) < optim_.entropy_warm_start * double(optim_.total_steps);
    if (warm) {
      batch.gold.resize(B * L);
      const auto& ws = model_cfg_.whitespace_ids;
      for (std::size_t i = 0; i < B * L; ++i)
        batch.gold[i] = std::find(ws.begin(), ws.end(), batch.inputs[i]) != ws.end();
    } else {
      batch.gold = hourglass::entropy_teacher(fwd.logits.value(), model_cfg_.entropy_k);
    }
  }
  auto parts = model_.loss(fwd, batch.targets, batch.gold);
  const double total = parts.total.item();
  if (!std::isfinite(total) || !std::isfinite(parts.lm_nats)) {
    const std::string msg = "non-finite loss at step " + std::to_string(step_ + 1) + ": " + describe_probs(fwd.b_hat);
    write_file(run_dir_ / "diverged.txt", msg + "\n");
    throw DivergedError(msg);
  }

  auto& params = model_.params();
  params.zero_grad();
  ad::backward(parts.total);
  StepMetrics m;
  m.step = ++step_;
  m.grad_norm = clip_grad_norm(params, optim_.clip);
  m.lr = lr_at(step_, optim_);
  adam_.step(params, m.lr);

  m.loss_total = total;
  m.loss_lm_bits = parts.lm_nats / std::numbers::ln2;
  m.loss_aux = parts.aux;
  m.sf = fwd.sf;
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

evaluation::EvalReport Trainer::validate() const {
  evaluation::EvalOptions eo;
  eo.window = optim_.val_window;
  eo.step = optim_.val_step;
  eo.max_windows = optim_.val_windows;
  auto r = evaluation::bpc(model_, data_.valid, eo);
  r.seed = optim_.seed;
  return r;
}

void Trainer::append_metrics(const StepMetrics& m) const {
  const auto path = run_dir_ / "metrics.csv";
  std::ofstream out(path, std::ios::app);
  out << metrics_row(m);
  if (!out) throw IoError("cannot append to '" + path.string() + "'");
}

TrainResult Trainer::run(const std::function<void(const StepMetrics&)>& on_log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto metrics = run_dir_ / "metrics.csv";
  if (step_ == 0) {
    write_file(metrics, std::string(kMetricsHeader) + "\n");
  } else if (std::filesystem::exists(metrics)) {
    // Drop rows logged after the resumed checkpoint.
    std::istringstream in(read_file(metrics));
    std::string line, kept;
    std::getline(in, line);
    kept = line + "\n";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (parse_number<std::size_t>("step", line.substr(0, line.find(','))) > step_) break;
      kept += line + "\n";
    }
    write_file(metrics, kept);
  }
  TrainResult result;
  const std::size_t every = optim_.validation_interval();
  while (step_ < optim_.total_steps) {
    result.last = step();
    if (step_ % optim_.log_every == 0 || step_ == optim_.total_steps) {
      append_metrics(result.last);
      if (on_log) on_log(result.last);
    }
    if (step_ % every == 0 || step_ == optim_.total_steps) {
      const auto rep = validate();
      ValidationRecord rec{step_, rep.bpc, rep.sf};
      validations_.push_back(rec);
      const bool improved = !best_ || rec.bpc < best_->bpc;
      if (improved) best_ = rec;
      save(run_dir_ / "checkpoints" / "last.ckpt");
      if (improved) save(run_dir_ / "checkpoints" / "best.ckpt");
    }
  }
  result.steps = step_;
  result.validations = validations_;
  if (best_) result.best = *best_;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void Trainer::save(const std::filesystem::path& path) const {
  Checkpoint c;
  c.config_text = model_cfg_.serialize();
  std::ostringstream meta;
  meta << "step = " << step_ << "\nadam_steps = " << adam_.steps() << "\nseed = " << optim_.seed << "\n";
  std::ostringstream rng;
  rng << rng_;
  meta << "rng = " << rng.str() << "\n";
  if (best_) meta << "best_step = " << best_->step << "\nbest_bpc = " << format_double(best_->bpc) << "\nbest_sf = "
                  << format_double(best_->sf) << "\n";
  std::string hist;
  for (const auto& v : validations_)
    hist += (hist.empty() ? "" : ";") + std::to_string(v.step) + ":" + format_double(v.bpc) + ":" + format_double(v.sf);
  meta << "validations = " << hist << "\n";
  c.meta_text = meta.str();
  hourglass::store_params(c, model_.params());
  adam_.store(c, model_.params());
  hourglass::save_checkpoint(path, c);
}

void Trainer::resume(const std::filesystem::path& path) {
  const Checkpoint c = hourglass::load_checkpoint(path);
  hourglass::check_config(c, model_cfg_);
  std::size_t step = 0, adam_steps = 0;
  std::string rng_state;
  std::vector<ValidationRecord> hist;
  ValidationRecord best;
  bool has_best = false;
  for (const auto& [k, v] : parse_key_values(c.meta_text, "checkpoint metadata")) {
    if (k == "step") step = parse_number<std::size_t>(k, v);
    else if (k == "adam_steps") adam_steps = parse_number<std::size_t>(k, v);
    else if (k == "rng") rng_state = v;
    else if (k == "best_step") {
      best.step = parse_number<std::size_t>(k, v);
      has_best = true;
    } else if (k == "best_bpc") best.bpc = parse_number<double>(k, v);
    else if (k == "best_sf") best.sf = parse_number<double>(k, v);
    else if (k == "validations") {
      std::istringstream in(v);
      std::string item;
      while (std::getline(in, item, ';')) {
        const auto a = item.find(':'), z = item.rfind(':');
        if (a == std::string::npos || a == z) throw DataError("malformed validation history in checkpoint");
        hist.push_back({parse_number<std::size_t>(k, item.substr(0, a)),
                        parse_number<double>(k, item.substr(a + 1, z - a - 1)),
                        parse_number<double>(k, item.substr(z + 1))});
      }
    }
  }
  if (rng_state.empty()) throw DataError("checkpoint '" + path.string() + "' has no training state");
  if (step > optim_.total_steps) throw DataError("checkpoint step exceeds total_steps");
  hourglass::restore_params(c, model_.params());
  adam_.restore(c, model_.params(), adam_steps);
  std::istringstream in(rng_state);
  in >> rng_;
  if (!in) throw DataError("checkpoint RNG state is malformed");
  step_ = step;
  best_.reset();
  if (has_best) best_ = best;
  validations_ = hist;
}

template double clip_grad_norm<float>(ad::ParameterSet<float>&, double);
template double clip_grad_norm<double>(ad::ParameterSet<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace dpt::trainer
