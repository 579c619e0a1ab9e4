#include "testing.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "anomaforge/commands.hpp"
#include "anomaforge/config.hpp"
#include "anomaforge/error.hpp"
#include "anomaforge/hashing.hpp"
#include "anomaforge/image_io.hpp"
#include "anomaforge/texture_corpus.hpp"

using namespace anomaforge;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

struct Workspace {
  fs::path root;
  RunConfig cfg;

  explicit Workspace(const std::string& name, int train = 5, int test_good = 4, int test_defect = 4)
      : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    corpus::TextureCorpusConfig c;
    c.image_size = 32;
    c.train_good = train;
    c.test_good = test_good;
    c.test_defect = test_defect;
    c.min_area = 0.02;
    c.max_area = 0.2;
    corpus::write_texture_corpus(root / "data", c);
    cfg.data_root = (root / "data").string();
    cfg.work_dir = (root / "work").string();
    cfg.image_size = 32;
    cfg.T = 100;
    cfg.t_anom = 50;
    cfg.ddpm_steps = 10;
    cfg.ddpm_batch = 2;
    cfg.ddpm_channels = 8;
    cfg.n_per_image = 1;
    cfg.perlin_scale_min = 4;
    cfg.perlin_scale_max = 16;
    cfg.embed_dim = 32;
    cfg.depth = 2;
    cfg.taps = {1, 2};
    cfg.seg_channels = 8;
    cfg.steps = 5;
    cfg.batch_size = 2;
    cfg.log_every = 1;
  }
  ~Workspace() { fs::remove_all(root); }

  fs::path write_config(const RunConfig& c, const std::string& name = "run.cfg") const {
    const auto p = root / name;
    std::ofstream(p) << c.serialize();
    return p;
  }
};

int run_cli(const std::string& args, std::string* err_out = nullptr) {
  const auto err = fs::temp_directory_path() / "anomaforge_cli_err.txt";
  const std::string cmd = std::string(ANOMAFORGE_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  if (err_out) *err_out = read_file(err);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parse and serialize round trip") {
  const std::string text =
      "# comment\n[run]\ncategory = \"bottle\"\nseed = 12\n\nlr = 0.0005\ntaps = 1, 3\nuse_focal = false\n";
  auto cfg = RunConfig::parse(text);
  CHECK(cfg.category == "bottle");
  CHECK(cfg.seed == 12);
  CHECK(cfg.lr == 0.0005);
  CHECK(cfg.taps == std::vector<int>({1, 3}));
  CHECK_FALSE(cfg.use_focal);
  const auto canonical = cfg.serialize();
  CHECK(RunConfig::parse(canonical) == cfg);
  CHECK(RunConfig::parse(canonical).serialize() == canonical);
  CHECK(RunConfig().serialize() == RunConfig::parse(RunConfig().serialize()).serialize());

  auto keys = RunConfig::keys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(std::count(canonical.begin(), canonical.end(), '\n') == static_cast<long>(keys.size()));

  RunConfig odd;
  odd.beta_start = 1.0 / 3.0;
  odd.sigma_extra = 0.1 + 0.2;
  CHECK(RunConfig::parse(odd.serialize()) == odd);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(RunConfig::parse("nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("use_l1 = maybe\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("just text\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/cfg"), ConfigError);
  RunConfig c;
  c.apply({"lr=0.01", "use_seg_head=false"});
  CHECK(c.lr == 0.01);
  CHECK_FALSE(c.use_seg_head);
  CHECK(c.get("lr") == "0.01");
  CHECK_THROWS_AS(c.apply({"lr"}), ConfigError);

  RunConfig v;
  CHECK_NOTHROW(v.validate());
  v.morph_op = "smudge";
  CHECK_THROWS(v.validate());
  v = RunConfig{};
  v.use_focal = false;
  v.use_l1 = false;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = RunConfig{};
  v.t_anom = 0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
}

TEST_CASE("work_dir falls back to the environment") {
  RunConfig c;
  ::unsetenv("ANOMAFORGE_WORKDIR");
  CHECK_THROWS_AS(c.work_path(), ConfigError);
  ::setenv("ANOMAFORGE_WORKDIR", "/tmp/af_env", 1);
  CHECK(c.work_path() == fs::path("/tmp/af_env"));
  c.work_dir = "/tmp/af_cfg";
  CHECK(c.work_path() == fs::path("/tmp/af_cfg"));
  ::unsetenv("ANOMAFORGE_WORKDIR");
}

TEST_CASE("config converters") {
  RunConfig c;
  CHECK(sampling_t_anom(c) == 80);
  c.t_anom = 400;
  CHECK(sampling_t_anom(c) == 40);
  c.t_anom = 5;
  CHECK(sampling_t_anom(c) == 1);
  CHECK(c.effective_top_k() == 6);
  c.top_k = 17;
  CHECK(c.effective_top_k() == 17);
  c.morph_op = "open";
  CHECK(c.synth_config().morph_op.has_value());
  c.morph_op = "none";
  CHECK_FALSE(c.synth_config().morph_op.has_value());
  c.use_decoder = false;
  CHECK_FALSE(c.detector_config().use_decoder);
  CHECK_FALSE(c.loss_config().use_decoder);
}

TEST_CASE("pipeline commands") {
  Workspace ws("anomaforge_cli_pipeline");
  std::ostringstream log;

  auto ddpm = cmd_train_ddpm(ws.cfg, log);
  CHECK(fs::exists(ddpm.checkpoint));
  auto lines = read_lines(ddpm.loss_log);
  CHECK(lines.size() == 11);
  CHECK(lines[0] == "step,loss");
  const auto first_log = read_file(ddpm.loss_log);
  cmd_train_ddpm(ws.cfg, log);
  CHECK(read_file(ddpm.loss_log) == first_log);

  auto syn = cmd_synthesize(ws.cfg, log);
  CHECK(syn.count == 5);
  CHECK(syn.sampling_t_anom == 5);
  std::vector<std::string> hashes;
  for (const auto& line : read_lines(syn.store / "manifest.jsonl")) {
    auto rec = nlohmann::json::parse(line);
    const double a = rec["area_fraction"];
    CHECK(a > 0.0);
    CHECK(a <= 0.5);
    hashes.push_back(sha256_file(syn.store / rec["defect"].get<std::string>()));
    hashes.push_back(sha256_file(syn.store / rec["mask"].get<std::string>()));
  }
  const auto manifest_hash = sha256_file(syn.store / "manifest.jsonl");
  cmd_synthesize(ws.cfg, log);
  CHECK(sha256_file(syn.store / "manifest.jsonl") == manifest_hash);
  std::size_t h = 0;
  for (const auto& line : read_lines(syn.store / "manifest.jsonl")) {
    auto rec = nlohmann::json::parse(line);
    CHECK(sha256_file(syn.store / rec["defect"].get<std::string>()) == hashes[h++]);
    CHECK(sha256_file(syn.store / rec["mask"].get<std::string>()) == hashes[h++]);
  }

  auto det = cmd_train_detector(ws.cfg, log);
  CHECK(fs::exists(det.checkpoint));
  CHECK(det.teacher_hash_before == det.teacher_hash_after);
  auto det_lines = read_lines(det.loss_log);
  CHECK(det_lines.size() == 6);
  CHECK(det_lines[0] == "step,total,cos_level0,cos_level1,cos,focal,l1,seg,lr");

  auto ev = cmd_evaluate(ws.cfg, true, log);
  const auto& m = ev.report.per_category.front();
  for (double v : {m.i_auroc, m.p_auroc, m.aupro}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(m.images == 8);
  CHECK(read_lines(ev.scores_path).size() == 8);
  CHECK(fs::exists(ev.json_path));
  CHECK(fs::exists(ev.csv_path));
  auto map = io::load_score16(ws.cfg.eval_dir() / "maps" / "good" / "000.png");
  CHECK(map.size(0) == 32);
  CHECK(fs::exists(ws.cfg.eval_dir() / "overlays" / "good" / "000.png"));
  CHECK(cmd_visualize(ws.cfg, log) == 8);

  auto no_seg = ws.cfg;
  no_seg.use_seg_head = false;
  auto r = cmd_train_detector(no_seg, log);
  CHECK(r.csv_header == "step,total,cos_level0,cos_level1,cos,lr");
  CHECK(read_lines(r.loss_log)[0].find("seg") == std::string::npos);

  for (const auto& entry : fs::recursive_directory_iterator(ws.root)) {
    const auto rel = fs::relative(entry.path(), ws.root).generic_string();
    CHECK((rel.rfind("data", 0) == 0 || rel.rfind("work", 0) == 0 || rel.rfind("run", 0) == 0));
  }
}

TEST_CASE("command-line exit codes") {
  Workspace ws("anomaforge_cli_exit", 3, 2, 0);
  std::string err;

  auto missing = ws.cfg;
  missing.data_root = (ws.root / "absent_data").string();
  CHECK(run_cli("train-ddpm --config " + ws.write_config(missing).string(), &err) == 3);
  CHECK(err.find("absent_data") != std::string::npos);

  CHECK(run_cli("train-ddpm --config " + (ws.root / "none.cfg").string()) == 2);
  CHECK(run_cli("train-ddpm --config " + ws.write_config(ws.cfg).string() + " --set bogus=1") == 2);
  CHECK(run_cli("train-ddpm --config " + ws.write_config(ws.cfg).string() + " --set lr=-1") == 2);
  CHECK(run_cli("frobnicate") == 2);

  CHECK(run_cli("train-ddpm --config " + ws.write_config(ws.cfg).string() + " --set ddpm_steps=2") == 0);
  CHECK(run_cli("synthesize --config " + ws.write_config(ws.cfg).string()) == 0);
  CHECK(run_cli("train-detector --config " + ws.write_config(ws.cfg).string() + " --set steps=1") == 0);
  CHECK(run_cli("evaluate --config " + ws.write_config(ws.cfg).string(), &err) == 3);
  CHECK(err.find("undefined") != std::string::npos);

  CHECK(run_cli("synthesize --config " + ws.write_config(ws.cfg).string() + " --set ddpm_steps=2 --set work_dir=" +
                (ws.root / "empty_work").string()) == 3);
}

TEST_CASE("exit-code mapping") {
  std::ostringstream err;
  CHECK(run_guarded([] {}, err) == 0);
  CHECK(run_guarded([] { throw ConfigError("c"); }, err) == 2);
  CHECK(run_guarded([] { throw DataError("d"); }, err) == 3);
  CHECK(run_guarded([] { throw NumericError("n"); }, err) == 4);
  CHECK(run_guarded([] { throw std::runtime_error("x"); }, err) == 1);
}
