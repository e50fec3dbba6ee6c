#include <doctest.h>

#include <fstream>

#include "owr/config.hpp"
#include "owr/error.hpp"
#include "test_util.hpp"

using namespace owr;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kIo;  // sentinel: parsed fine
}

}  // namespace

TEST_CASE("defaults expand to built-in profiles") {
  const auto c = parse_config("");
  CHECK(c.signal.known.size() == 6);
  CHECK(c.signal.novel.size() == 2);
  CHECK(c.signal.known[0].class_id == "emitter-00");
  CHECK(c.signal.novel[0].class_id == "emitter-06");
  CHECK(c.signal.n_bins() == 33);
  CHECK(c.signal.n_frames() == 32);
  CHECK(c.loss.eta1 == 0.5);
  CHECK(c.loss.eta2 == 0.3);
  CHECK(c.loss.eta3 == 0.2);
  CHECK(c.shrinkage == 0.1);
  CHECK(c.discovery.elbow_tolerance == 0.9);
  const auto s = c.session();
  CHECK(s.n_min == 100);
  CHECK(s.old_max == 5);
  CHECK(s.new_max == 60);
  CHECK(s.memory_capacity == 1000);
}

TEST_CASE("serialize and parse round trip") {
  auto c = parse_config(
      "[seeds]\nroot = 99\n[signal]\nsnr_db = 0, 10, inf\nsamples_per_class = 12\n"
      "[encoder]\nhidden = 32, 16\nembed_dim = 8\nactivation = tanh\n"
      "[loss]\nmargin = 2.5\n[openset]\nshrinkage = 0.25\n"
      "[discovery]\nk_max = 5\npurity_threshold = 0.8\n"
      "[incremental]\nold_max = 0\nflush_at_end = false\n[budget]\nmax_update_steps = 77\n");
  CHECK(c.seed == 99);
  CHECK(c.signal.snr_db.size() == 3);
  CHECK(std::isinf(c.signal.snr_db[2]));
  CHECK(c.hidden_widths == std::vector<std::size_t>{32, 16});
  CHECK(c.activation == embedding::Activation::kTanh);
  CHECK(c.discovery.tau_p == 0.8);
  CHECK(c.incremental.old_max == 0);
  CHECK_FALSE(c.incremental.flush_at_end);
  CHECK(c.max_update_steps == 77);
  const auto text = serialize_config(c);
  const auto back = parse_config(text);
  CHECK(back == c);
  CHECK(serialize_config(back) == text);
}

TEST_CASE("explicit profiles") {
  const std::string text =
      "[profile:a]\ntones = 100000, 150000\nbandwidth = 10000\n"
      "[profile:b]\ntones = 300000\nhop_period = 0.000256\n"
      "[profile:c]\ntones = 200000\nrole = novel\nam_depth = 0.3\n";
  const auto c = parse_config(text);
  REQUIRE(c.signal.known.size() == 2);
  REQUIRE(c.signal.novel.size() == 1);
  CHECK(c.signal.novel[0].class_id == "c");
  CHECK(c.signal.known[0].tone_set == std::vector<double>{100000, 150000});
  CHECK(c.signal.known[1].hop_period == 0.000256);
  CHECK(parse_config(serialize_config(c)) == c);
  CHECK(kind_of("[profile:a]\ntones = 1\nrole = maybe\n") == ErrorKind::kConfig);
}

TEST_CASE("bad configs are config errors") {
  CHECK(kind_of("[nonsense]\nx = 1\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal]\nfft = 64\n") == ErrorKind::kConfig);
  CHECK(kind_of("stray = 1\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal]\nfft_size = 48\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal]\nsamples_per_class = ten\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal]\nsnr_db = nan\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal]\nknown_classes = 1\n") == ErrorKind::kConfig);
  CHECK(kind_of("[openset]\nshrinkage = 1.5\n") == ErrorKind::kConfig);
  CHECK(kind_of("[discovery]\nelbow_tolerance = 0\n") == ErrorKind::kConfig);
  CHECK(kind_of("[encoder]\nactivation = sigmoid\n") == ErrorKind::kConfig);
  CHECK(kind_of("[incremental]\nflush_at_end = maybe\n") == ErrorKind::kConfig);
  CHECK(kind_of("[budget]\nmax_update_steps = -1\n") == ErrorKind::kConfig);
  CHECK(kind_of("[signal\n") == ErrorKind::kConfig);
}

TEST_CASE("files and relative data paths") {
  const auto dir = testutil::scratch("config");
  std::ofstream(dir / "run.ini") << "[paths]\ndata = out/data\n";
  CHECK_THROWS_AS(load_config(dir / "run.ini"), Error);  // parent missing
  std::filesystem::create_directories(dir / "out");
  const auto c = load_config(dir / "run.ini");
  CHECK(c.data_dir == (dir / "out/data").lexically_normal());
  try {
    load_config(dir / "absent.ini");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    CHECK(exit_code(e.kind()) == 2);
  }
}

TEST_CASE("shipped config loads") {
  const auto c = load_config(std::string(OWR_TEST_DATA_DIR) + "/../../configs/synthetic.ini");
  CHECK(c.seed == 7);
  CHECK(c.signal.known.size() == 6);
  CHECK(c.signal.novel.size() == 2);
  CHECK(c.signal.samples_per_class == 300);
}
