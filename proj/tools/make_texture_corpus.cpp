#include <iostream>

#include <CLI11.hpp>

#include "anomaforge/commands.hpp"
#include "anomaforge/texture_corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"procedural striped-texture corpus in MVTec layout"};
  std::string out;
  anomaforge::corpus::TextureCorpusConfig cfg;
  app.add_option("--out", out, "data root")->required();
  app.add_option("--category", cfg.category);
  app.add_option("--size", cfg.image_size);
  app.add_option("--train", cfg.train_good);
  app.add_option("--test-good", cfg.test_good);
  app.add_option("--test-defect", cfg.test_defect);
  app.add_option("--seed", cfg.seed);
  CLI11_PARSE(app, argc, argv);

  return anomaforge::run_guarded(
      [&] {
        auto s = anomaforge::corpus::write_texture_corpus(out, cfg);
        std::cout << "train/good " << s.train_good << " test/good " << s.test_good << " test/defect "
                  << s.test_defect << " mean defect area " << s.mean_defect_area << '\n';
      },
      std::cerr);
}
