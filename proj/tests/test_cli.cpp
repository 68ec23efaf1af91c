#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef MIFN_CLI_PATH
#error "MIFN_CLI_PATH must name the mifn executable"
#endif

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = -1;
  std::string out;
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string("\"") + MIFN_CLI_PATH + "\" " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

const std::string kSmall =
    " --synth_users 60 --synth_sequences_per_user 4 --synth_items_a 30 --synth_items_b 30 --synth_categories 6"
    " --synth_max_len 5 --seed 3 -q";

}  // namespace

TEST(Cli, EndToEnd) {
  const fs::path dir = fs::temp_directory_path() / "mifn_test_cli";
  fs::remove_all(dir);
  const std::string out = " --out \"" + dir.string() + "\"";

  CliResult g = run("generate" + out + kSmall);
  ASSERT_EQ(g.status, 0) << g.out;
  EXPECT_TRUE(fs::exists(dir / "events.tsv"));
  EXPECT_TRUE(fs::exists(dir / "triples.tsv"));

  CliResult b = run("build-kg" + out + " --events \"" + (dir / "events.tsv").string() + "\" --triples \"" +
              (dir / "triples.tsv").string() + "\" -q");
  ASSERT_EQ(b.status, 0) << b.out;
  EXPECT_NE(b.out.find("gt_in_subgraph_ratio_B"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "subgraphs.txt"));

  const std::string cfg = " -c \"" + (dir / "config.txt").string() + "\"";
  CliResult t = run("train" + cfg + " --dim 8 --epochs 1 -q");
  ASSERT_EQ(t.status, 0) << t.out;
  EXPECT_NE(t.out.find("best_epoch\t1"), std::string::npos) << t.out;
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "train_log.tsv"));

  // train rewrote config.txt, so evaluate picks up dim = 8 from it
  CliResult e = run("evaluate" + cfg + " --baseline -q");
  ASSERT_EQ(e.status, 0) << e.out;
  EXPECT_NE(e.out.find("Recall@20"), std::string::npos);
  EXPECT_NE(e.out.find("popularity"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report.tsv"));

  CliResult ei = run("evaluate" + cfg + " --ratio 0.5 -q");
  ASSERT_EQ(ei.status, 0) << ei.out;
  EXPECT_TRUE(fs::exists(dir / "report_ratio_0.5.tsv"));

  // a wrong dimension is caught by the checkpoint shape check
  CliResult bad_dim = run("evaluate" + cfg + " --dim 9 -q");
  EXPECT_EQ(bad_dim.status, 1);

  const fs::path seq = dir / "user.tsv";
  {
    std::ifstream events(dir / "events.tsv");
    std::ofstream f(seq);
    std::string line, first_user;
    while (std::getline(events, line)) {
      const std::string user = line.substr(0, line.find('\t'));
      if (first_user.empty()) first_user = user;
      if (user != first_user) break;
      f << line << '\n';
    }
  }
  CliResult r = run("recommend" + cfg + " --sequence \"" + seq.string() + "\" --top_k 3 -q");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("domain A"), std::string::npos);
  EXPECT_NE(r.out.find("domain B"), std::string::npos);
  EXPECT_NE(r.out.find("\n3\t"), std::string::npos);
  EXPECT_EQ(r.out.find("\n4\t"), std::string::npos);
}

TEST(Cli, BadInvocationsFail) {
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
  EXPECT_NE(run("train --no-such-flag 1").status, 0);
  EXPECT_NE(run("recommend --out /nonexistent").status, 0);  // --sequence is required
  EXPECT_EQ(run("train --out /nonexistent/mifn -q").status, 1);
  EXPECT_EQ(run("train --dim abc").status, 1);
}

TEST(Cli, HelpListsSubcommands) {
  const CliResult h = run("--help");
  EXPECT_EQ(h.status, 0);
  for (const char* s : {"generate", "build-kg", "train", "evaluate", "recommend", "selftest"})
    EXPECT_NE(h.out.find(s), std::string::npos) << s;
}

TEST(Cli, SelftestPasses) {
  const CliResult s = run("selftest --cases 20");
  EXPECT_EQ(s.status, 0) << s.out;
  EXPECT_NE(s.out.find("PASS gradient"), std::string::npos) << s.out;
  EXPECT_EQ(s.out.find("FAIL"), std::string::npos) << s.out;
}
