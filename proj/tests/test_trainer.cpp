#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"
#include "kilnnet/parallel.hpp"
#include "kilnnet/synth.hpp"
#include "kilnnet/trainer.hpp"

using namespace kiln;
namespace fs = std::filesystem;

namespace {

// 33 chips of 32 px; one train, val and test chip per class.
const Manifest& small_manifest() {
  static const Manifest m = [] {
    const auto dir = fs::temp_directory_path() / "kilnnet_trainer_data";
    fs::remove_all(dir);
    SynthOptions opt;
    opt.per_class = 3;
    opt.chip_size = 32;
    opt.seed = 11;
    synth_generate(dir.string(), opt);
    return load_manifest((dir / "manifest.csv").string());
  }();
  return m;
}

NetworkConfig tiny() {
  NetworkConfig c;
  c.n_a = 1;
  c.n_b = 1;
  c.n_c = 1;
  c.width = 0.125;
  c.input_size = 32;
  return c;
}

std::vector<std::vector<double>> parameter_values(const Network& net) {
  std::vector<std::vector<double>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

ErrorKind kind_of(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = {};
  c.batch_size = 0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = {};
  c.momentum = 1.0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = {};
  c.learning_rate = -0.1;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = {};
  c.learning_rate = std::nan("");
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
}

TEST_CASE("sgd matches a hand-stepped two-parameter model") {
  // loss = (a*x - y)^2 + 3b, so dL/da = 2x(a*x - y) and dL/db = 3.
  const double x = 1.5, y = 0.25, lr = 0.05, mu = 0.9, wd = 0.01;
  Tensor a = Tensor::full({1}, 0.8, true);
  Tensor b = Tensor::full({1}, -0.4, true);
  Sgd sgd({a, b}, lr, mu, wd);
  double ra = 0.8, rb = -0.4, va = 0.0, vb = 0.0;
  for (int step = 0; step < 4; ++step) {
    sgd.zero_grad();
    Tensor r = add(mul(a, Tensor::full({1}, x)), Tensor::full({1}, -y));
    Tensor loss = add(sum(mul(r, r)), sum(mul(b, Tensor::full({1}, 3.0))));
    loss.backward();
    sgd.step();
    const double ga = 2.0 * x * (ra * x - y);
    const double gb = 3.0;
    va = mu * va + (ga + wd * ra);
    vb = mu * vb + (gb + wd * rb);
    ra -= lr * va;
    rb -= lr * vb;
    CHECK(a.values()[0] == Catch::Approx(ra).epsilon(1e-14));
    CHECK(b.values()[0] == Catch::Approx(rb).epsilon(1e-14));
  }
  // The first step alone is -lr * (grad + wd * p).
  Tensor c = Tensor::full({1}, 2.0, true);
  Sgd single({c}, 0.1, 0.9, 0.5);
  single.zero_grad();
  Tensor loss = sum(mul(c, Tensor::full({1}, 4.0)));
  loss.backward();
  single.step();
  CHECK(c.values()[0] == 2.0 - 0.1 * (4.0 + 0.5 * 2.0));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Network net(tiny(), 3);
  const auto before = parameter_values(net);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.learning_rate = 0.0;
  c.weight_decay = 0.0;
  train(net, small_manifest(), c);
  CHECK(parameter_values(net) == before);
}

TEST_CASE("training is deterministic") {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 21;
  c.augment = Augment::flip;
  auto run = [&](int threads) {
    set_num_threads(threads);
    Network net(tiny(), 5);
    auto result = train(net, small_manifest(), c);
    set_num_threads(1);
    return std::make_pair(result.log.to_csv(), encode_checkpoint(result.last));
  };
  const auto first = run(1);
  CHECK(first == run(1));
  CHECK(first == run(3));
  c.seed = 22;
  CHECK(first.first != run(1).first);
}

TEST_CASE("train log format") {
  TrainLog log;
  log.epochs.push_back({1, 2.5, 0.125, 0.75, 0.0});
  log.epochs.push_back({2, 0.1, 0.2, 1.0, 0.0});
  CHECK(log.to_csv() == "epoch,train_loss,val_loss,val_acc,seconds\n"
                        "1,2.5,0.125,0.75,0\n"
                        "2,0.1,0.2,1,0\n");
}

TEST_CASE("overfits eight chips") {
  Manifest m = small_manifest();
  std::size_t kept = 0;
  for (auto& r : m.records) {
    if (r.split == Split::train) r.split = kept++ < 8 ? Split::train : Split::test;
  }
  REQUIRE(m.count(Split::train) == 8);
  Network net(tiny(), 8);
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 8;
  c.seed = 8;
  const auto result = train(net, m, c);
  REQUIRE(result.log.epochs.size() == 200);
  INFO("final train loss " << result.log.epochs.back().train_loss);
  CHECK(result.log.epochs.back().train_loss < 0.01);
  for (const auto& e : result.log.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
  }
  CHECK(evaluate_loss(net, m, Split::train).accuracy == 1.0);
}

TEST_CASE("zeroed head predicts the uniform distribution") {
  Network net(tiny(), 2);
  for (double& w : net.classifier_weight().mutable_values()) w = 0.0;
  for (double& w : net.classifier_bias().mutable_values()) w = 0.0;
  const auto report = evaluate_loss(net, small_manifest(), Split::val);
  CHECK(report.count == 11);
  CHECK(std::abs(report.loss - std::log(11.0)) < 1e-12);
}

TEST_CASE("evaluate_loss agrees with a per-sample loop") {
  Network net(tiny(), 4);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  train(net, small_manifest(), c);
  const ChipSet chips = load_chips(small_manifest(), Split::train);
  const auto report = evaluate_loss(net, chips, 5);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < chips.pixels.size(); ++i) {
    const Tensor probs = predict(net, chips, 64);
    const auto row = probs.values().subspan(i * 11, 11);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 11; ++k) {
      if (row[k] > row[best]) best = k;
    }
    correct += best == static_cast<std::size_t>(chips.labels[i]);
    loss -= std::log(row[chips.labels[i]]);
  }
  CHECK(report.accuracy == static_cast<double>(correct) / chips.pixels.size());
  CHECK(report.loss == Catch::Approx(loss / chips.pixels.size()).epsilon(1e-10));
}

TEST_CASE("small steps do not increase the loss on a fixed batch") {
  NetworkConfig cfg = tiny();
  cfg.dropout = 0.0;
  Network net(cfg, 6);
  const ChipSet chips = load_chips(small_manifest(), Split::train);
  const Tensor images = stack_chips(chips, 0, chips.pixels.size());
  std::vector<Tensor> params;
  for (const auto& p : net.parameters()) params.push_back(p.tensor);
  Sgd sgd(params, 1e-3, 0.9, 1e-4);
  double previous = 0.0;
  for (int step = 0; step < 10; ++step) {
    sgd.zero_grad();
    Tensor loss = softmax_cross_entropy(net.forward(images, Mode::train), chips.labels);
    if (step > 0) CHECK(loss.item() <= previous);
    previous = loss.item();
    loss.backward();
    sgd.step();
  }
}

TEST_CASE("checkpoint round trip") {
  Network net(tiny(), 9);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  train(net, small_manifest(), c);
  Checkpoint ck = snapshot(net);
  ck.metadata["note"] = "round trip";
  const auto path = (fs::temp_directory_path() / "kilnnet_roundtrip.ckpt").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.seed == 9);
  CHECK(back.metadata == ck.metadata);
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
  Network restored = restore(back);
  const auto a = evaluate_loss(net, small_manifest(), Split::val);
  const auto b = evaluate_loss(restored, small_manifest(), Split::val);
  CHECK(std::abs(a.loss - b.loss) <= 1e-12);
  CHECK(a.accuracy == b.accuracy);
  fs::remove(path);
}

TEST_CASE("checkpoint byte layout") {
  Checkpoint ck;
  ck.seed = 0x0102030405060708ULL;
  ck.config = tiny();
  ck.tensors.push_back({"w", {2}, {1.0, -2.0}});
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "KILNCKPT");
  CHECK(bytes.substr(8, 4) == std::string("\x01\x00\x00\x00", 4));
  CHECK(bytes.substr(12, 8) == std::string("\x08\x07\x06\x05\x04\x03\x02\x01", 8));
  // 1.0 little-endian sits just before the final 8 bytes.
  CHECK(bytes.substr(bytes.size() - 16, 8) == std::string("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8));
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.tensors[0].values == ck.tensors[0].values);
  CHECK(back.config.width == 0.125);
  CHECK(back.config.input_size == 32);

  CHECK(kind_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == ErrorKind::decode);
  CHECK(kind_of([&] { decode_checkpoint(bytes + "x"); }) == ErrorKind::decode);
  CHECK(kind_of([&] { decode_checkpoint("KILNCKPX" + bytes.substr(8)); }) == ErrorKind::decode);
  std::string future = bytes;
  future[8] = 2;
  CHECK(kind_of([&] { decode_checkpoint(future); }) == ErrorKind::decode);
  CHECK(kind_of([&] { load_checkpoint("/nonexistent/x.ckpt"); }) == ErrorKind::io);

  Network other(tiny(), 1);
  std::string msg;
  CHECK(kind_of([&] { restore_into(other, ck); }, &msg) == ErrorKind::decode);
  CHECK(msg.find("w") != std::string::npos);
}

TEST_CASE("training writes best and last checkpoints") {
  const auto dir = fs::temp_directory_path() / "kilnnet_train_out";
  fs::remove_all(dir);
  Network net(tiny(), 12);
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 4;
  c.checkpoint_every = 2;
  c.out_dir = dir.string();
  const auto result = train(net, small_manifest(), c);
  for (const char* leaf : {"best.ckpt", "last.ckpt", "epoch_0002.ckpt", "epoch_0004.ckpt",
                           "train_log.csv"}) {
    CHECK(fs::exists(dir / leaf));
  }
  CHECK_FALSE(fs::exists(dir / "epoch_0001.ckpt"));
  CHECK(read_file((dir / "train_log.csv").string()) == result.log.to_csv());
  double best = result.log.epochs[0].val_loss;
  std::size_t best_epoch = 1;
  for (const auto& e : result.log.epochs) {
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
  }
  CHECK(result.best_epoch == best_epoch);
  CHECK(load_checkpoint((dir / "best.ckpt").string()).metadata.at("epoch") ==
        std::to_string(best_epoch));
  CHECK(encode_checkpoint(load_checkpoint((dir / "last.ckpt").string())) ==
        encode_checkpoint(result.last));
  Network best_net = restore(result.best);
  CHECK(evaluate_loss(best_net, small_manifest(), Split::val).loss == best);
  fs::remove_all(dir);
}

TEST_CASE("training preconditions and divergence") {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  Manifest no_val = small_manifest();
  for (auto& r : no_val.records) {
    if (r.split == Split::val) r.split = Split::test;
  }
  Network net(tiny(), 1);
  CHECK(kind_of([&] { train(net, no_val, c); }) == ErrorKind::validation);

  NetworkConfig ten = tiny();
  ten.num_classes = 10;
  Network wrong(ten, 1);
  CHECK(kind_of([&] { train(wrong, small_manifest(), c); }) == ErrorKind::config);

  NetworkConfig big = tiny();
  big.input_size = 48;
  Network mismatch(big, 1);
  CHECK(kind_of([&] { train(mismatch, small_manifest(), c); }) == ErrorKind::config);

  c.learning_rate = 1e300;
  c.epochs = 3;
  std::string msg;
  CHECK(kind_of([&] { train(net, small_manifest(), c); }, &msg) == ErrorKind::divergence);
  CHECK(msg.find("epoch 1") != std::string::npos);
  CHECK(msg.find("batch") != std::string::npos);
}
