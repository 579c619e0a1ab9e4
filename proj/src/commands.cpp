#include "anomaforge/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <nlohmann/json.hpp>

#include "anomaforge/dataset.hpp"
#include "anomaforge/denoiser.hpp"
#include "anomaforge/diffusion.hpp"
#include "anomaforge/error.hpp"
#include "anomaforge/image_io.hpp"
#include "anomaforge/inference.hpp"
#include "anomaforge/network.hpp"
#include "anomaforge/training.hpp"

namespace anomaforge {

namespace fs = std::filesystem;

namespace {

data::CorpusIndex scan(const RunConfig& cfg, data::Split split) {
  if (cfg.data_root.empty()) throw DataError("data_root is not set");
  if (!fs::is_directory(cfg.data_root)) throw DataError("data_root does not exist: " + cfg.data_root);
  return data::scan_mvtec_layout(cfg.data_root, cfg.category, split);
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

struct TripletPool {
  torch::Tensor normal, defect, mask;  // (N,3,H,W), (N,3,H,W), (N,H,W) float
};

TripletPool load_pool(const data::TripletStore& store, int size) {
  std::vector<torch::Tensor> n, d, m;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto t = store.load(i, size, true);
    n.push_back(t.normal);
    d.push_back(t.defect);
    m.push_back(t.mask.values().to(torch::kFloat32));
  }
  return {torch::stack(n), torch::stack(d), torch::stack(m)};
}

train::TripletBatch draw_batch(const TripletPool& pool, const RunConfig& cfg, torch::Generator& gen) {
  const auto n = pool.normal.size(0);
  auto idx = torch::randint(n, {cfg.batch_size}, gen, torch::kInt64);
  auto normal = pool.normal.index_select(0, idx);
  auto defect = pool.defect.index_select(0, idx).clone();
  auto mask = pool.mask.index_select(0, idx).clone();
  auto clean = torch::rand({cfg.batch_size}, gen, torch::kFloat64) < cfg.clean_fraction;
  for (int b = 0; b < cfg.batch_size; ++b) {
    if (clean[b].item<bool>()) {
      defect[b].copy_(normal[b]);
      mask[b].zero_();
    }
  }
  return {normal, defect, mask};
}

std::string image_id(const data::CorpusEntry& e) { return e.defect_type + "/" + e.image.stem().string(); }

}  // namespace

int sampling_t_anom(const RunConfig& cfg) {
  const int strided_steps = std::max(1, cfg.T / cfg.sample_stride);
  return std::clamp(cfg.t_anom / cfg.sample_stride, 1, strided_steps);
}

DdpmRunResult cmd_train_ddpm(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto index = scan(cfg, data::Split::train);
  if (index.entries.empty()) throw DataError("no normal training images in " + cfg.data_root);
  auto images = data::load_images(index, cfg.image_size);
  const auto sched = diffusion::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);

  torch::manual_seed(synth::mix_seed(cfg.seed, 11));
  diffusion::UNetDenoiser net(cfg.unet_config());
  torch::optim::Adam opt(net.trainable_parameters(), torch::optim::AdamOptions(cfg.ddpm_lr));
  auto gen = diffusion::make_generator(synth::mix_seed(cfg.seed, 12));

  DdpmRunResult res;
  res.checkpoint = cfg.ddpm_checkpoint();
  res.loss_log = res.checkpoint.parent_path() / "loss.csv";
  auto csv = open_out(res.loss_log);
  csv << "step,loss\n";
  const int batch = std::min<int>(cfg.ddpm_batch, static_cast<int>(images.size(0)));
  for (int step = 1; step <= cfg.ddpm_steps; ++step) {
    auto idx = torch::randperm(images.size(0), gen, torch::kInt64).slice(0, 0, batch);
    const double loss = diffusion::ddpm_train_step(net, images.index_select(0, idx), sched, gen, &opt);
    csv << step << ',' << fmt(loss) << '\n';
    res.final_loss = loss;
    if (step % cfg.log_every == 0 || step == cfg.ddpm_steps) log << "ddpm step " << step << " loss " << loss << '\n';
  }
  res.steps = cfg.ddpm_steps;
  diffusion::save_ddpm(res.checkpoint, net,
                       {cfg.unet_config(), cfg.T, cfg.beta_start, cfg.beta_end, cfg.image_size});
  return res;
}

SynthesizeResult cmd_synthesize(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto index = scan(cfg, data::Split::train);
  if (!fs::exists(cfg.ddpm_checkpoint())) throw DataError("diffusion checkpoint not found: " + cfg.ddpm_checkpoint().string());
  auto [net, meta] = diffusion::load_ddpm(cfg.ddpm_checkpoint());
  if (meta.image_size != cfg.image_size) throw ConfigError("diffusion checkpoint was trained at a different image_size");
  const auto sched = diffusion::make_schedule(meta.steps, meta.beta_start, meta.beta_end).strided(cfg.sample_stride);

  SynthesizeResult res;
  res.store = cfg.triplet_store();
  res.sampling_t_anom = std::min(sampling_t_anom(cfg), sched.steps());
  std::error_code ec;
  fs::remove_all(res.store, ec);
  torch::NoGradGuard no_grad;
  const auto summary = data::build_triplets(index, cfg.triplet_config(res.sampling_t_anom), *net, sched, res.store);
  res.count = summary.count;
  res.mean_area_fraction = summary.mean_area_fraction;
  log << "triplets " << res.count << " mean_area_fraction " << res.mean_area_fraction << '\n';
  return res;
}

DetectorRunResult cmd_train_detector(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const data::TripletStore store(cfg.triplet_store());
  if (store.size() == 0) throw DataError("triplet store is empty: " + store.root().string());
  const auto pool = load_pool(store, cfg.image_size);

  train::JointTrainer trainer(net::DetectorModel(cfg.detector_config()), cfg.loss_config(), cfg.optim_config());
  auto gen = diffusion::make_generator(synth::mix_seed(cfg.seed, 21));

  DetectorRunResult res;
  res.checkpoint = cfg.detector_checkpoint();
  res.loss_log = res.checkpoint.parent_path() / "loss.csv";
  res.csv_header = trainer.csv_header();
  res.teacher_hash_before = trainer.model()->teacher_hash();
  auto csv = open_out(res.loss_log);
  csv << res.csv_header << '\n';

  const auto fixed = draw_batch(pool, cfg, gen);
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = cfg.overfit ? fixed : draw_batch(pool, cfg, gen);
    const auto b = trainer.step(batch);
    csv << trainer.csv_row(b) << '\n';
    if (step == 1) res.initial_loss = b.total;
    res.final_loss = b.total;
    if (step % cfg.log_every == 0 || step == cfg.steps) log << "detector step " << step << " loss " << b.total << '\n';
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps) {
      net::save_detector(res.checkpoint, trainer.model());
    }
  }
  res.steps = cfg.steps;
  res.teacher_hash_after = trainer.model()->teacher_hash();
  if (res.teacher_hash_after != res.teacher_hash_before) throw NumericError("teacher parameters changed during training");
  net::save_detector(res.checkpoint, trainer.model());
  return res;
}

EvaluateResult cmd_evaluate(const RunConfig& cfg, bool visualize, std::ostream& log) {
  cfg.validate();
  const auto index = scan(cfg, data::Split::test);
  if (index.count(data::Label::anomalous) == 0) {
    throw DataError("test set of " + cfg.category + " has no anomalous images; AUROC and AUPRO are undefined");
  }
  if (index.count(data::Label::normal) == 0) {
    throw DataError("test set of " + cfg.category + " has no normal images; AUROC and AUPRO are undefined");
  }
  if (!fs::exists(cfg.detector_checkpoint())) throw DataError("detector checkpoint not found: " + cfg.detector_checkpoint().string());
  auto model = net::load_detector(cfg.detector_checkpoint());
  // a run with the head switched off scores a trained model by its layer maps alone
  if (!cfg.use_seg_head) model->cfg.use_seg_head = false;
  model->eval();
  const int k = cfg.effective_top_k();

  EvaluateResult res;
  const fs::path dir = cfg.eval_dir();
  res.scores_path = dir / "scores.jsonl";
  res.json_path = dir / "report.json";
  res.csv_path = dir / "report.csv";
  auto scores_out = open_out(res.scores_path);

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<torch::Tensor> maps, masks;
  torch::NoGradGuard no_grad;
  for (const auto& e : index.entries) {
    auto image = io::load_rgb(e.image, cfg.image_size);
    auto mask = e.mask ? io::load_mask(*e.mask, cfg.image_size)
                       : torch::zeros({cfg.image_size, cfg.image_size}, torch::kUInt8);
    auto result = infer::analyze(model, image, k);
    const std::string id = image_id(e);
    io::save_score16(dir / "maps" / e.defect_type / (e.image.stem().string() + ".png"), result.pixel_map);
    if (visualize) io::save_overlay(dir / "overlays" / e.defect_type / (e.image.stem().string() + ".png"), image, mask, result.pixel_map);
    nlohmann::json rec = {{"image", id},
                          {"label", e.label == data::Label::anomalous ? 1 : 0},
                          {"score", result.image_score},
                          {"k", result.k_used}};
    scores_out << rec.dump() << '\n';
    scores.push_back(result.image_score);
    labels.push_back(e.label == data::Label::anomalous ? 1 : 0);
    maps.push_back(result.pixel_map.to(torch::kFloat64));
    masks.push_back(mask);
  }
  res.report.fpr_limit = cfg.fpr_limit;
  res.report.add(metrics::evaluate_category(cfg.category, scores, labels, maps, masks, cfg.aupro_options()));
  res.report.write(res.json_path, res.csv_path);
  const auto& m = res.report.per_category.front();
  log << cfg.category << " I-AUROC " << m.i_auroc << " P-AUROC " << m.p_auroc << " AUPRO " << m.aupro << '\n';
  return res;
}

std::size_t cmd_visualize(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto index = scan(cfg, data::Split::test);
  if (!fs::exists(cfg.detector_checkpoint())) throw DataError("detector checkpoint not found: " + cfg.detector_checkpoint().string());
  auto model = net::load_detector(cfg.detector_checkpoint());
  // a run with the head switched off scores a trained model by its layer maps alone
  if (!cfg.use_seg_head) model->cfg.use_seg_head = false;
  model->eval();
  torch::NoGradGuard no_grad;
  const fs::path dir = cfg.eval_dir() / "overlays";
  std::size_t written = 0;
  for (const auto& e : index.entries) {
    auto image = io::load_rgb(e.image, cfg.image_size);
    auto mask = e.mask ? io::load_mask(*e.mask, cfg.image_size)
                       : torch::zeros({cfg.image_size, cfg.image_size}, torch::kUInt8);
    auto map = infer::score_pixels(model, image);
    io::save_overlay(dir / e.defect_type / (e.image.stem().string() + ".png"), image, mask, map);
    ++written;
  }
  log << "overlays " << written << " in " << dir.string() << '\n';
  return written;
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace anomaforge
