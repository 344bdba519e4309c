#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdiff/harness.hpp"

using namespace cdiff;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "t.cfg");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    return e.what();
  }
  return "no error";
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cdiff_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) v.push_back(f);
  return v;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  for (std::string l; std::getline(ss, l);) v.push_back(l);
  return v;
}

}  // namespace

TEST(Config, MinimalFillsDefaults) {
  const auto c = parse_config("seed = 7\nprompt.a = Apple on Table\nprompt.b = Lemon on Table\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.steps, 11);
  EXPECT_EQ(c.width, 16);
  EXPECT_EQ(c.height, 16);
  EXPECT_EQ(c.channel, "fixed");
  EXPECT_EQ(c.channel_values, (std::vector<double>{0.0}));
  EXPECT_EQ(c.shared_steps, (std::vector<int>{5}));
  EXPECT_EQ(c.repetitions, 50);
  EXPECT_EQ(c.architectures, (std::vector<std::string>{"edge"}));
  ASSERT_EQ(c.prompts.size(), 2u);
  EXPECT_EQ(c.prompts[0].first, "a");
  EXPECT_TRUE(c.devices.contains("edge"));
  EXPECT_TRUE(c.devices.contains("b"));
  EXPECT_EQ(c.cell_count(), 1u);
}

TEST(Config, UnknownKeyNamed) {
  const auto msg = config_error("seed = 1\nprompt.a = apple\ncolour = red\n");
  EXPECT_NE(msg.find("colour"), std::string::npos);
  EXPECT_NE(msg.find("t.cfg:3:"), std::string::npos);
}

TEST(Config, BerGridGivesSixCells) {
  const auto c = parse_config("seed = 1\nprompt.a = apple\nber = [0, 0.005, 0.01, 0.02, 0.05, 0.1]\n");
  EXPECT_EQ(c.cell_count(), 6u);
  const auto cells = cells_of(c);
  EXPECT_EQ(ber(cells[3].link), 0.02);
  const auto grid = parse_config("seed = 1\nprompt.a = apple\narchitecture = [edge, cluster]\nshared_steps = [3, 5, 7]\nsnr = [1, 3]\n");
  EXPECT_EQ(grid.cell_count(), 12u);
  EXPECT_EQ(grid.channel, "awgn");
  const auto gc = cells_of(grid);
  EXPECT_EQ(gc[0].architecture, "edge");
  EXPECT_EQ(gc[11].architecture, "cluster");
  EXPECT_EQ(gc[1].shared_steps, 3);
  EXPECT_EQ(gc[2].shared_steps, 5);
  EXPECT_EQ(gc[1].link.snr().value(), 3.0);
}

TEST(Config, Violations) {
  EXPECT_NE(config_error("prompt.a = apple\n").find("seed"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\n").find("prompt"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nrepetitions = 0\n").find("repetitions"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nber = []\n").find("ber"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nber = [0.5, 2]\n").find("ber"), std::string::npos);
  EXPECT_NE(config_error("seed = x\nprompt.a = apple\n").find("t.cfg:1:"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nseed = 2\nprompt.a = apple\n").find("duplicate"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nshared_steps = [12]\n").find("shared_steps"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\ngraph = /no/such/graph.txt\n").find("does not exist"),
            std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nchannel = awgn\n").find("snr"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\narchitecture = mesh\n").find("mesh"), std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\ndevice.a.compute_rate = -1\n").find("compute_rate"),
            std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\ndevice.a.speed = 3\n").find("device.a.speed"),
            std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\nschema_version = 9\n").find("schema_version"),
            std::string::npos);
  EXPECT_NE(config_error("seed = 1\nprompt.a = apple\njunk line\n").find("t.cfg:3:"), std::string::npos);
  try {
    load_config("/no/such/config.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Config, DeviceOverridesAndTimeline) {
  const auto c = parse_config(
      "seed = 1\nprompt.a = apple\ndevice.a.compute_rate = 4\ndevice.a.power_class = high\n"
      "device.edge.compute_rate = 30\nfade_timeline = [0:5, 0.2:0.1]\nsplit_increment = 3\n");
  EXPECT_EQ(c.devices.at("a").compute_rate, 4.0);
  EXPECT_EQ(c.devices.at("a").power_class, PowerClass::high);
  EXPECT_EQ(c.devices.at("edge").compute_rate, 30.0);
  EXPECT_EQ(c.devices.at("edge").role, DeviceRole::edge);
  ASSERT_EQ(c.fade_timeline.size(), 2u);
  EXPECT_EQ(c.fade_timeline[1].snr, 0.1);
  EXPECT_EQ(c.adapt.increment, 3);
}

TEST(Config, ShippedSamplesLoad) {
  for (const char* name : {"minimal.cfg", "fading_link.cfg", "custom_assets.cfg"}) {
    EXPECT_NO_THROW(load_config(std::string(CDIFF_SOURCE_DIR) + "/configs/" + name)) << name;
  }
  for (const auto& [name, text] : preset_texts()) EXPECT_NO_THROW(preset_config(name)) << name;
  EXPECT_THROW(preset_config("nope"), Error);
}

TEST(Summary, SingleRepetitionHasZeroStd) {
  auto c = preset_config("ber_sweep");
  c.repetitions = 1;
  c.channel_values = {0.02};
  const auto dir = scratch("single");
  const auto out = run_scenario(c, dir.string(), 1);
  EXPECT_EQ(out.rows.size(), 2u);
  const auto lines = split_lines(slurp(out.summary_path));
  ASSERT_EQ(lines.size(), 3u);  // header + one row per user
  const auto h = split_csv(lines[0]);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = split_csv(lines[r]);
    ASSERT_EQ(h.size(), f.size());
    for (std::size_t i = 0; i < h.size(); ++i)
      if (h[i].ends_with("_std")) {
        EXPECT_EQ(f[i], "0") << h[i];
      }
  }
}

TEST(Summary, HandComputedMeans) {
  std::string csv;
  for (std::size_t i = 0; i < result_columns().size(); ++i) csv += (i ? "," : "") + result_columns()[i];
  csv += "\n";
  auto row = [](int cell, int rep, double psnr, int fid) {
    ResultRow r;
    r.scenario = "s";
    r.cell = static_cast<std::size_t>(cell);
    r.architecture = "d2d";
    r.repetition = rep;
    r.user = "u2";
    r.channel = "fixed";
    r.psnr_ref = psnr;
    r.fidelity = fid;
    r.predicted = "lemon";
    return to_csv_line(r) + "\n";
  };
  csv += row(0, 0, 10, 1) + row(0, 1, 20, 0) + row(1, 0, 30, 1) + row(1, 1, 30, 1) + row(1, 2, 60, 1);
  const auto lines = split_lines(summarize_csv(csv));
  ASSERT_EQ(lines.size(), 3u);
  const auto h = split_csv(lines[0]), a = split_csv(lines[1]), b = split_csv(lines[2]);
  auto at = [&](const std::vector<std::string>& r, const std::string& col) {
    return std::stod(r[static_cast<std::size_t>(std::find(h.begin(), h.end(), col) - h.begin())]);
  };
  EXPECT_EQ(at(a, "n"), 2);
  EXPECT_DOUBLE_EQ(at(a, "psnr_ref_mean"), 15.0);
  EXPECT_NEAR(at(a, "psnr_ref_std"), std::sqrt(50.0), 1e-9);
  EXPECT_DOUBLE_EQ(at(a, "fidelity_mean"), 0.5);
  EXPECT_EQ(at(b, "n"), 3);
  EXPECT_DOUBLE_EQ(at(b, "psnr_ref_mean"), 40.0);
  EXPECT_NEAR(at(b, "psnr_ref_std"), std::sqrt(300.0), 1e-9);
  EXPECT_DOUBLE_EQ(at(b, "fidelity_std"), 0.0);
}

TEST(Summary, MissingColumnNamed) {
  try {
    summarize_csv("scenario,cell,architecture,user,shared_steps,channel,ber\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'snr'"), std::string::npos);
  }
  EXPECT_THROW(summarize_csv(""), Error);
  EXPECT_THROW(emit_summary("/no/such.csv", "/tmp/x.csv"), Error);
}

TEST(Run, RowCountImagesAndPgmReadback) {
  auto c = preset_config("mismatch");
  c.repetitions = 3;
  const auto dir = scratch("rows");
  const auto out = run_scenario(c, dir.string(), 2);
  EXPECT_EQ(out.rows.size(), c.cell_count() * 3 * 3);
  EXPECT_EQ(out.images.size(), c.cell_count() * 3 * 2);
  const auto& first = out.rows.front();
  EXPECT_EQ(first.shared_steps, 4);
  EXPECT_EQ(first.local_steps, 7);
  for (const auto& r : out.rows) {
    for (double v : {r.mse_ref, r.psnr_ref, r.ssim_ref, r.mse_proto, r.psnr_proto, r.ssim_proto, r.margin,
                     r.latency_s, r.energy_j})
      EXPECT_TRUE(std::isfinite(v));
  }
  // final image of user1, cell 0 re-reads to the clamped, scaled values of the sampler output
  const auto img = read_pgm(out.images[0]);
  const auto again = run_cell(prepare(c), cells_of(c)[0], 0);
  const auto& u = again.result.user("user1");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(img.data[i], to_gray8(u.final.data[i]) / 255.0);
  const std::string csv = slurp(out.csv_path);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(out.rows.size() + 1));
}

TEST(Run, ParallelismDoesNotChangeBytes) {
  auto c = preset_config("arch_compare");
  c.repetitions = 4;
  const auto d1 = scratch("j1"), d8 = scratch("j8");
  const auto a = run_scenario(c, d1.string(), 1);
  const auto b = run_scenario(c, d8.string(), 8);
  EXPECT_EQ(slurp(a.csv_path), slurp(b.csv_path));
  EXPECT_EQ(slurp(a.summary_path), slurp(b.summary_path));
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(slurp(a.images[i]), slurp(b.images[i]));
}

TEST(Run, CustomAssetsScenario) {
  const auto c = load_config(std::string(CDIFF_SOURCE_DIR) + "/configs/custom_assets.cfg");
  EXPECT_EQ(c.cell_count(), 4u);
  const auto sc = prepare(c);
  EXPECT_EQ(sc.mixture.concepts(), (std::vector<std::string>{"apple", "lemon", "bird"}));
  const auto dir = scratch("custom");
  auto small = c;
  small.repetitions = 2;
  EXPECT_EQ(run_scenario(small, dir.string(), 2).rows.size(), 4u * 2u * 2u);
}
