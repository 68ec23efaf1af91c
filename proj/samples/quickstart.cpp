// Library quickstart: generate a synthetic corpus, build the knowledge
// subgraphs, train briefly, evaluate and print recommendations for one user.
//
//   sample_quickstart [output_dir]

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mifn/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) try {
  mifn::RunConfig cfg;
  cfg.out = argc > 1 ? argv[1] : (fs::temp_directory_path() / "mifn_quickstart").string();
  cfg.synthetic.users = 200;
  cfg.synthetic.items_a = 80;
  cfg.synthetic.items_b = 80;
  cfg.synthetic.categories = 10;
  cfg.model.dim = 16;
  cfg.train.epochs = 3;
  cfg.seed = 1;

  mifn::cmd_generate(cfg);
  const mifn::Dataset ds = mifn::cmd_build_kg(cfg);
  const mifn::TrainResult trained = mifn::cmd_train(cfg);
  std::cout << "best epoch " << trained.best_epoch << " of " << trained.history.size() << "\n\n";

  mifn::cmd_evaluate(cfg).write_table(std::cout);

  // recommend for the first test user, using their full sequence as context
  const auto& seq = ds.sequences[ds.split.test.front()];
  const fs::path user_file = fs::path(cfg.out) / "quickstart_user.tsv";
  {
    std::ofstream f(user_file);
    std::int64_t t = 0;
    for (const auto& x : seq.items)
      f << "user\t" << ds.vocab.item(x.domain, x.item) << '\t'
        << (x.domain == mifn::Domain::A ? cfg.labels.a : cfg.labels.b) << '\t' << t++ << '\n';
  }
  cfg.top_k = 5;
  std::cout << '\n';
  mifn::write_recommendations(std::cout, mifn::cmd_recommend(cfg, user_file.string()));
  return 0;
} catch (const std::exception& e) {
  std::cerr << "quickstart failed: " << e.what() << '\n';
  return 1;
}
