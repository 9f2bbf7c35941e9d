#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <sys/wait.h>
#include <unistd.h>

#include "sysrisk/io.hpp"

using namespace sysrisk;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[banks]
a = [1.0, 0.5]
u = [1.0, 0.8]
sigma = [0.2, 0.3]   # per bank

[init]
x0 = [0.5, -0.25]
y = 0.1
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sysrisk_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_path(const std::string& name) { return std::string(SYSRISK_CONFIG_DIR) + "/" + name; }

int run_cli(const std::string& args, std::string* err = nullptr) {
  const fs::path log = scratch("stderr") / "err.txt";
  const std::string cmd = std::string(SYSRISK_CLI_PATH) + " " + args + " > /dev/null 2> " + log.string();
  const int status = std::system(cmd.c_str());
  if (err) *err = read_text_file(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Format, SeventeenDigitsRoundTrip) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> ud(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = ud(gen) * std::pow(10.0, static_cast<double>(i % 40) - 20.0);
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(Config, MinimalParses) {
  const auto cfg = parse_config_text(kMinimal);
  ASSERT_EQ(cfg.scenario.n_banks(), 2u);
  EXPECT_EQ(cfg.scenario.banks[1], (BankType{0.5, 0.8, 0.3}));
  EXPECT_EQ(cfg.scenario.init[1].y, 0.1);
  EXPECT_EQ(cfg.solver.damping, 0.5);
  EXPECT_EQ(cfg.solver.tol, 1e-4);
  EXPECT_EQ(cfg.scenario.rho_exp, 1.0);
}

TEST(Config, RoundTrip) {
  const auto a = parse_config_text(kMinimal);
  const auto b = parse_config_text(serialize_config(a));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(serialize_config(a), serialize_config(b));
}

TEST(Config, LawRoundTrip) {
  for (const char* name : {"iid.toml", "hetero4.toml", "scalar.toml"}) {
    const auto a = parse_config(config_path(name));
    const auto b = parse_config_text(serialize_config(a));
    EXPECT_TRUE(a == b) << name;
  }
}

TEST(Config, DefaultsRecorded) {
  const auto cfg = parse_config_text(kMinimal);
  const auto has = [&](const std::string& s) {
    return std::find(cfg.defaults.begin(), cfg.defaults.end(), s) != cfg.defaults.end();
  };
  EXPECT_TRUE(has("solver.damping=0.5"));
  EXPECT_TRUE(has("solver.tol=0.0001"));
  EXPECT_TRUE(has("model.rho=1"));
  EXPECT_TRUE(has("solver.basis=affine"));
}

TEST(Config, NegativeSigma0NamesField) {
  const auto msg = error_of(std::string(kMinimal) + "[noise]\nsigma0 = -1\n");
  EXPECT_NE(msg.find("sigma0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("A_s1"), std::string::npos) << msg;
}

TEST(Config, ThetaOrderCitesAssumption) {
  const auto msg = error_of(std::string(kMinimal) + "[theta]\nlo = 1\nhi = -1\n");
  EXPECT_NE(msg.find("A_Theta"), std::string::npos) << msg;
}

TEST(Config, NegativeRateCitesAssumption) {
  std::string text = kMinimal;
  text.replace(text.find("a = [1.0"), 8, "a = [-1.0");
  EXPECT_NE(error_of(text).find("A_s1"), std::string::npos);
}

TEST(Config, MissingRequiredKeyNamed) {
  const auto msg = error_of("[banks]\na = [1]\nu = [1]\n[init]\nx0 = [0]\ny = [0]\n");
  EXPECT_NE(msg.find("'sigma'"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_NE(error_of(std::string(kMinimal) + "[cost]\ngamma = 1\n").find("unknown key 'gamma'"), std::string::npos);
  EXPECT_NE(error_of(std::string(kMinimal) + "[extras]\n").find("unknown section"), std::string::npos);
}

TEST(Config, MalformedInput) {
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[time]\nsteps = 2.5\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[time]\nT\n").empty());
  EXPECT_FALSE(error_of("[banks]\na = [1, 2\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[banks]\n").empty());  // duplicate section
  EXPECT_FALSE(error_of("[banks]\na = \"beta(1, 2)\"\nu = 1\nsigma = 1\ncount = 2\n[init]\nx0 = 0\ny = 0\n").empty());
}

TEST(Config, BroadcastNeedsCount) {
  const std::string base = "[banks]\na = 1\nu = 1\nsigma = 0.2\n[init]\nx0 = 0\ny = 0\n";
  EXPECT_NE(error_of(base).find("count"), std::string::npos);
  const auto cfg = parse_config_text("[banks]\na = 1\nu = 1\nsigma = 0.2\ncount = 3\n[init]\nx0 = 0\ny = 0\n");
  EXPECT_EQ(cfg.scenario.n_banks(), 3u);
}

TEST(Config, SeedRedrawsLawTypes) {
  auto cfg = parse_config(config_path("iid.toml"));
  const auto before = cfg.scenario.banks;
  apply_seed(cfg, cfg.scenario.seed + 1);
  EXPECT_NE(before, cfg.scenario.banks);
  apply_seed(cfg, cfg.scenario.seed - 1);
  EXPECT_EQ(before, cfg.scenario.banks);
}

TEST(Csv, EmptyTableIsHeaderOnly) {
  const auto dir = scratch("csv_empty");
  CsvTable t{{"a", "b"}, {}};
  write_csv(t, dir / "e.csv");
  EXPECT_EQ(read_text_file(dir / "e.csv"), "a,b\n");
}

TEST(Csv, RoundTripExact) {
  const auto dir = scratch("csv_rt");
  CsvTable t{{"name", "n", "v"}, {}};
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  std::vector<double> vals;
  for (int i = 0; i < 50; ++i) {
    vals.push_back(nd(gen) * 1e-7);
    t.add({std::string("r,") + std::to_string(i), static_cast<long long>(i), vals.back()});
  }
  write_csv(t, dir / "t.csv");
  const auto back = read_csv(dir / "t.csv");
  ASSERT_EQ(back.rows.size(), 50u);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(std::get<std::string>(back.rows[i][0]), "r," + std::to_string(i));
    EXPECT_EQ(std::get<double>(back.rows[i][2]), vals[i]);
  }
}

TEST(Csv, WidthMismatchAndBadPath) {
  CsvTable t{{"a"}, {}};
  EXPECT_THROW(t.add({1.0, 2.0}), DimensionError);
  try {
    write_csv(t, "/nonexistent-dir/x.csv");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/x.csv"), std::string::npos);
  }
}

TEST(Manifest, FixedKeyOrder) {
  RunManifest m;
  m.command = "simulate";
  m.config_text = "x";
  const auto j = manifest_json(m);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  const std::vector<std::string> expect{"command", "argv", "config", "config_fingerprint", "defaults_applied",
                                        "seed", "toolkit_version", "threads", "outputs", "diagnostics",
                                        "wall_seconds"};
  EXPECT_EQ(keys, expect);
}

TEST(Svg, StudyChart) {
  StudyReport r;
  r.study = "gamma";
  r.rows = {{8, 0.3, 0.01, 0, 0, "ok"}, {16, 0.31, 0.01, 0, 0, "ok"}};
  const auto svg = study_svg(r);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(StudyCsv, Header) {
  StudyReport r;
  r.study = "gamma";
  r.seed = 4;
  r.fingerprint = "ff";
  r.rows = {{8, 0.5, 0.1, 0.2, 0.0, "ok"}};
  EXPECT_EQ(to_csv_text(study_table(r)), "study,N,value,se,aux,seed,fingerprint\ngamma,8,0.5,0.10000000000000001,0.20000000000000001,4,ff\n");
}

TEST(Cli, OptimizeWritesTraceAndManifest) {
  const auto out = scratch("cli_opt");
  ASSERT_EQ(run_cli("optimize --config " + config_path("scalar.toml") + " --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out / "trace.csv"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  const auto trace = read_csv(out / "trace.csv");
  EXPECT_EQ(trace.header, (std::vector<std::string>{"iter", "cost", "se", "step_norm", "damping"}));
  const auto j = nlohmann::json::parse(read_text_file(out / "manifest.json"));
  EXPECT_EQ(j["command"], "optimize");
  EXPECT_EQ(j["seed"], 7);
}

TEST(Cli, SeedOverride) {
  const auto out = scratch("cli_seed");
  ASSERT_EQ(run_cli("simulate --config " + config_path("hetero4.toml") + " --seed 99 --paths 10 --out " +
                    out.string()),
            0);
  const auto j = nlohmann::json::parse(read_text_file(out / "manifest.json"));
  EXPECT_EQ(j["seed"], 99);
  EXPECT_NE(j["config"].get<std::string>().find("paths = 10"), std::string::npos);
}

TEST(Cli, GradCheckScalar) {
  const auto out = scratch("cli_grad");
  ASSERT_EQ(run_cli("grad-check --config " + config_path("scalar.toml") + " --out " + out.string()), 0);
  const auto t = read_csv(out / "gradcheck.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"epsilon", "fd_derivative", "gateaux", "rel_err"}));
  EXPECT_LT(std::get<double>(t.rows.back()[3]), 1e-2);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  std::string err;
  EXPECT_EQ(run_cli("frobnicate --config " + config_path("scalar.toml"), &err), 2);
  EXPECT_EQ(err.rfind("error: kind=usage_error", 0), 0u) << err;
}

TEST(Cli, ValidationErrorLine) {
  const auto dir = scratch("cli_bad");
  write_text_file(dir / "bad.toml", std::string(kMinimal) + "[noise]\nsigma0 = -1\n");
  std::string err;
  EXPECT_EQ(run_cli("simulate --config " + (dir / "bad.toml").string() + " --out " + dir.string(), &err), 1);
  EXPECT_EQ(err.rfind("error: kind=config_error", 0), 0u) << err;
  EXPECT_NE(err.find("sigma0"), std::string::npos);
}

TEST(Cli, NumericalFailureExitsOne) {
  std::string err;
  const auto out = scratch("cli_hjb");
  EXPECT_EQ(run_cli("hjb1d --config " + config_path("hetero4.toml") + " --out " + out.string(), &err), 1);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Cli, DeterministicAcrossRunsAndThreads) {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"simulate", "hetero4.toml"},   {"optimize", "hetero4.toml"},  {"riccati", "hetero4.toml"},
      {"hjb1d", "scalar_noisy.toml"}, {"meanfield", "iid.toml"},     {"fpk-check", "iid.toml"},
      {"grad-check", "iid.toml"},     {"gamma-study", "iid.toml"},   {"metrics", "hetero4.toml"}};
  for (const auto& [cmd, cfg] : runs) {
    const auto a = scratch(cmd + "_a"), b = scratch(cmd + "_b");
    ASSERT_EQ(run_cli(cmd + " --config " + config_path(cfg) + " --threads 1 --out " + a.string()), 0) << cmd;
    ASSERT_EQ(run_cli(cmd + " --config " + config_path(cfg) + " --threads 3 --out " + b.string()), 0) << cmd;
    std::size_t csvs = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      if (entry.path().extension() != ".csv") continue;
      ++csvs;
      EXPECT_EQ(read_text_file(entry.path()), read_text_file(b / entry.path().filename()))
          << cmd << " " << entry.path().filename();
    }
    EXPECT_GT(csvs, 0u) << cmd;
  }
}
