#include <doctest.h>

#include <sstream>

#include "fpl/errors.hpp"
#include "fpl/model.hpp"
#include "fpl/model_graph.hpp"
#include "support.hpp"

using namespace fpl;

namespace {

std::size_t conv_count(std::size_t k, std::size_t cin, std::size_t cout) { return k * k * cin * cout + cout; }
std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t instantiate_and_sum(const LayerGraph& g) {
  Model m(g, 1);
  std::size_t n = 0;
  for (const auto& [_, p] : m.parameters()) n += p.value->storage().size();
  return n;
}

std::string strip_replica(const std::string& id) { return id.substr(0, id.find('@')); }

bool same_spec(const LayerSpec& a, const LayerSpec& b) {
  return a.id == b.id && a.kind == b.kind && a.channels == b.channels && a.kernel == b.kernel &&
         a.padding == b.padding && a.in_features == b.in_features && a.units == b.units && a.bias == b.bias &&
         a.inputs == b.inputs && a.source == b.source && a.replica == b.replica && a.branch == b.branch;
}

}  // namespace

TEST_CASE("LEAF CNN structure") {
  const auto g = build_leaf_cnn(62);
  CHECK(g.outputs() == std::vector<std::string>{"F2"});
  CHECK(g.find("F2")->units == 62);
  const auto shapes = infer_shapes(g);
  CHECK(shapes.at("flatten") == Shape{7 * 7 * 64});
  CHECK(shapes.at("C1.pool") == Shape{32, 14, 14});
  CHECK(layer_parameter_count(g, *g.find("C1")) == conv_count(5, 1, 32));
  CHECK(conv_count(5, 1, 32) == 832);
  CHECK(layer_parameter_count(g, *g.find("C2")) == conv_count(5, 32, 64));
  CHECK(layer_parameter_count(g, *g.find("F1")) == dense_count(3136, 2048));
  CHECK(layer_parameter_count(g, *g.find("F2")) == dense_count(2048, 62));
  const std::size_t closed = conv_count(5, 1, 32) + conv_count(5, 32, 64) + dense_count(3136, 2048) + dense_count(2048, 62);
  CHECK(closed == 6'603'710);
  CHECK(count_parameters(g) == closed);
  CHECK_THROWS_AS(build_leaf_cnn(1), ConfigError);
}

TEST_CASE("count_parameters matches an instantiate-and-sum oracle") {
  const auto g = test::tiny_cnn(5);
  CHECK(count_parameters(g) == instantiate_and_sum(g));
  for (std::size_t n : {1, 2, 3}) {
    CHECK(count_parameters(apply_fpl(g, n, "F2")) == instantiate_and_sum(apply_fpl(g, n, "F2")));
    CHECK(count_parameters(apply_fpl(g, n, "F1", false)) == instantiate_and_sum(apply_fpl(g, n, "F1", false)));
    CHECK(count_parameters(apply_sl_vertical(g, n)) == instantiate_and_sum(apply_sl_vertical(g, n)));
    CHECK(count_parameters(replicate_full(g, n)) == instantiate_and_sum(replicate_full(g, n)));
  }
  CHECK(count_parameters(LayerGraph{}) == 0);
}

TEST_CASE("FPL junction sizing") {
  const auto g = build_leaf_cnn(62);
  SUBCASE("one source gives a square junction") {
    const auto f = apply_fpl(g, 1, "F2");
    CHECK(f.find("J")->in_features == 2048);
    CHECK(f.find("J")->units == 2048);
  }
  SUBCASE("five sources before F2") {
    const auto f = apply_fpl(g, 5, "F2");
    CHECK(f.find("J")->in_features == 5 * 2048);
    CHECK(f.find("J")->units == 2048);
    CHECK(f.find("J")->inputs.size() == 5);
    CHECK(f.find("F2")->inputs == std::vector<std::string>{"J"});
    CHECK(f.find("F1@4")->branch == 4u);
    CHECK(f.find("C1@3")->source == 3);
    CHECK(f.num_sources() == 5);
  }
  SUBCASE("five sources before F1") {
    const auto f = apply_fpl(g, 5, "F1");
    CHECK(f.find("J")->in_features == 5 * 3136);
    CHECK(f.find("J")->units == 3136);
    CHECK(f.find("F1")->in_features == 3136);
  }
  SUBCASE("sizing rule holds for every junction point and source count") {
    const auto shapes = infer_shapes(g);
    for (const char* point : {"F1", "F2"})
      for (std::size_t n = 1; n <= 5; ++n) {
        const auto f = apply_fpl(g, n, point);
        const auto fs = infer_shapes(f);
        std::size_t sum = 0;
        for (const auto& in : f.find("J")->inputs) sum += shape_numel(fs.at(in));
        CHECK(f.find("J")->in_features == sum);
        CHECK(f.find("J")->units == g.find(point)->in_features);
        CHECK(sum == n * shape_numel(shapes.at(g.find(point)->inputs[0])));
      }
  }
  SUBCASE("junction parameter count") {
    const auto f = apply_fpl(g, 5, "F2");
    const std::size_t five_replicas = count_parameters(remove_junction(f));
    CHECK(count_parameters(f) - five_replicas == (5 * 2048) * 2048 + 2048);
    CHECK(five_replicas == 5 * (count_parameters(g) - dense_count(2048, 62)) + dense_count(2048, 62));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(apply_fpl(g, 5, "F9"), ConfigError);
    CHECK_THROWS_AS(apply_fpl(g, 5, "C2"), ConfigError);
    CHECK_THROWS_AS(apply_fpl(g, 0, "F2"), ConfigError);
    LayerGraph flat;
    flat.input_shape = {1, 2, 2};
    flat.num_classes = 2;
    flat.layers = {{.id = "F", .kind = LayerKind::kDense, .in_features = 4, .units = 2}};
    CHECK_THROWS_AS(apply_fpl(flat, 2, "F"), ConfigError);
  }
}

TEST_CASE("FPL with one source minus the junction restores the topology") {
  const auto g = build_leaf_cnn(62);
  const auto r = remove_junction(apply_fpl(g, 1, "F2"));
  REQUIRE(r.layers.size() == g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    CHECK(strip_replica(r.layers[i].id) == g.layers[i].id);
    CHECK(r.layers[i].kind == g.layers[i].kind);
    std::vector<std::string> ins;
    for (const auto& in : r.layers[i].inputs) ins.push_back(strip_replica(in));
    CHECK(ins == g.layers[i].inputs);
  }
  CHECK(count_parameters(r) == count_parameters(g));
  CHECK_THROWS_AS(remove_junction(g), ConfigError);
}

TEST_CASE("split learning vertical partitioning") {
  const auto g = build_leaf_cnn(62);
  SUBCASE("one source is the base topology") {
    const auto s = apply_sl_vertical(g, 1);
    REQUIRE(s.layers.size() == g.layers.size());
    for (std::size_t i = 0; i < g.layers.size(); ++i) CHECK(strip_replica(s.layers[i].id) == g.layers[i].id);
    CHECK(count_parameters(s) == count_parameters(g));
  }
  SUBCASE("five sources widen F1") {
    const auto s = apply_sl_vertical(g, 5);
    CHECK(s.find("F1")->in_features == 5 * 3136);
    CHECK(s.find("F1")->units == 2048);
    CHECK(s.find("concat")->inputs.size() == 5);
    CHECK(layer_parameter_count(s, *s.find("F1")) - layer_parameter_count(g, *g.find("F1")) == 4 * 3136 * 2048);
  }
}

TEST_CASE("placement") {
  const auto g = build_leaf_cnn(62);
  SUBCASE("single node has no cut edges") {
    std::map<std::string, std::string> all;
    for (const auto& l : g.layers) all[l.id] = "edge";
    const auto p = place(g, all);
    CHECK(p.cut_edges.empty());
    CHECK(p.nodes() == std::vector<std::string>{"edge"});
  }
  SUBCASE("FPL J->F2 on five sources") {
    const auto f = apply_fpl(g, 5, "F2");
    const auto p = place(f, default_assignment(f));
    REQUIRE(p.cut_edges.size() == 5);
    for (const auto& e : p.cut_edges) {
      CHECK(e.width == 2048);
      CHECK(e.consumer == "J");
    }
    CHECK(p.cut_width() == 5 * 2048);
    CHECK(p.replicas.at("C1").size() == 5);
    CHECK(p.placement.at("C2@3") == "src3");
    CHECK(p.placement.at("F2") == "edge");
    std::size_t crossing = 0;
    for (const auto& l : f.layers)
      for (const auto& in : l.inputs) crossing += p.placement.at(in) != p.placement.at(l.id);
    CHECK(crossing == p.cut_edges.size());
    CHECK(p.placement.size() == f.layers.size());
  }
  SUBCASE("full replicas have no cut edges") {
    const auto r = replicate_full(g, 5);
    const auto p = place(r, default_assignment(r));
    CHECK(p.cut_edges.empty());
    CHECK(p.nodes().size() == 5);
    CHECK(r.outputs().size() == 5);
  }
  SUBCASE("errors") {
    auto a = default_assignment(g);
    a.erase("F1");
    CHECK_THROWS_AS(place(g, a), ConfigError);
    auto b = default_assignment(g);
    b["ghost"] = "edge";
    CHECK_THROWS_AS(place(g, b), ConfigError);
  }
}

TEST_CASE("shape validation") {
  auto g = test::tiny_cnn(4);
  g.find("F1")->in_features += 1;
  CHECK_THROWS_AS(validate(g), ConfigError);
  auto h = test::tiny_cnn(4);
  h.find("C2")->inputs = {"nowhere"};
  CHECK_THROWS_AS(validate(h), ConfigError);
  auto k = test::tiny_cnn(4);
  k.find("F2")->units = 3;
  CHECK_THROWS_AS(validate(k), ConfigError);
  CHECK(upstream_of(build_leaf_cnn(62), "C2.relu") == std::vector<std::string>{"C1", "C1.relu", "C1.pool", "C2"});
}

TEST_CASE("architecture text round trip") {
  for (const auto& g : {build_leaf_cnn(62), apply_fpl(build_leaf_cnn(10), 3, "F1", false),
                        apply_sl_vertical(build_leaf_cnn(62), 2), replicate_full(test::tiny_cnn(3), 2)}) {
    std::stringstream ss;
    write_graph(ss, g);
    const auto back = read_graph(ss);
    CHECK(back.input_shape == g.input_shape);
    CHECK(back.num_classes == g.num_classes);
    REQUIRE(back.layers.size() == g.layers.size());
    for (std::size_t i = 0; i < g.layers.size(); ++i) CHECK(same_spec(back.layers[i], g.layers[i]));
  }
  std::stringstream bad("[graph]\nnum_classes = 2\n[layer.X]\nkind = wobble\n");
  CHECK_THROWS_AS(read_graph(bad), ConfigError);
}

TEST_CASE("model forward shapes and init keyed by origin") {
  const auto g = test::tiny_cnn(5);
  Model base(g, 9);
  Model rep(replicate_full(g, 2), 9);
  CHECK(base.parameter("F1.weight").value->storage() == rep.parameter("F1@0.weight").value->storage());
  CHECK(base.parameter("F1.weight").value->storage() != rep.parameter("F1@1.weight").value->storage());
  Tape tape(false);
  auto x = make_tensor({3, 1, 8, 8}, 0.5f);
  TensorPtr srcs[] = {x, x};
  auto outs = rep.forward(tape, srcs);
  REQUIRE(outs.size() == 2);
  CHECK(outs[0]->shape() == Shape{3, 5});
  CHECK(outs[0]->storage() == base.forward(tape, std::span<const TensorPtr>(srcs, 1))[0]->storage());
  CHECK_THROWS_AS(rep.forward(tape, std::span<const TensorPtr>(srcs, 1)), ConfigError);
}
