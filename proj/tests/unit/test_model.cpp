#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kmbart/data.hpp"
#include "kmbart/model.hpp"
#include "support.hpp"

namespace kmbart {
namespace {

using testing::make_example;
using testing::small_vocab;
using testing::tiny_config;

class ModelTest : public ::testing::Test {
 protected:
  Vocabulary vocab = small_vocab();
  ModelConfig config = tiny_config(vocab.size());
};

TEST_F(ModelTest, GenerationLayoutWithEvent) {
  auto ex = make_example(TaskType::intent, 2, config, 1, "to leave", "the man opens");
  const auto in = assemble_input(ex, vocab, {}, config.max_positions);
  const std::vector<int> expected = {tok::intent, tok::img, tok::img_feat, tok::img_feat, tok::img_end, tok::event,
                                     vocab.id("the"), vocab.id("man"), vocab.id("opens"), tok::event_end};
  EXPECT_EQ(in.encoder_ids, expected);
  EXPECT_EQ(in.visual_slots, (std::vector<int>{2, 3}));
  EXPECT_EQ(in.decoder_input, (std::vector<int>{tok::bos, vocab.id("to"), vocab.id("leave")}));
  EXPECT_EQ(in.decoder_target, (std::vector<int>{vocab.id("to"), vocab.id("leave"), tok::eos}));

  AssemblyOptions no_event;
  no_event.use_event = false;
  const auto short_in = assemble_input(ex, vocab, no_event, config.max_positions);
  EXPECT_EQ(short_in.encoder_ids,
            (std::vector<int>{tok::intent, tok::img, tok::img_feat, tok::img_feat, tok::img_end}));
}

TEST_F(ModelTest, EmptyVisualCaptionLayout) {
  MultimodalExample ex;
  ex.task = TaskType::caption;
  ex.target_text = "a";
  AssemblyOptions opt;
  opt.mode = AssemblyMode::masked;
  opt.mask_text = false;
  opt.mask_regions = false;
  const auto in = assemble_input(ex, vocab, opt, config.max_positions);
  EXPECT_EQ(in.encoder_ids,
            (std::vector<int>{tok::caption, tok::img, tok::img_end, tok::mlm, vocab.id("a"), tok::mlm_end}));
}

TEST_F(ModelTest, MaskedLayoutSubstitutesClsOnDecoderSide) {
  auto ex = make_example(TaskType::caption, 3, config, 2, "the man opens the door the dog is next to the table");
  AssemblyOptions opt;
  opt.mode = AssemblyMode::masked;
  bool seen_text = false, seen_region = false;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    opt.seed = seed;
    const auto in = assemble_input(ex, vocab, opt, config.max_positions);
    for (std::size_t i = 0; i < in.mlm_positions.size(); ++i) {
      const int pos = in.mlm_positions[i];
      EXPECT_EQ(in.decoder_input[pos], tok::cls);
      EXPECT_EQ(in.decoder_target[pos], in.mlm_original[i]);
      EXPECT_FALSE(Vocabulary::is_reserved(in.mlm_original[i]));
      seen_text = true;
    }
    for (int r : in.mrm_regions) {
      EXPECT_EQ(in.decoder_input[in.visual_slots[r]], tok::cls);
      seen_region = true;
    }
    for (std::size_t r = 0; r < in.visual_slots.size(); ++r) {
      const bool masked = std::find(in.mrm_regions.begin(), in.mrm_regions.end(), int(r)) != in.mrm_regions.end();
      if (!masked) {
        EXPECT_EQ(in.decoder_input[in.visual_slots[r]], tok::img_feat);
      }
    }
    for (std::size_t p = 0; p < in.decoder_target.size(); ++p) {
      const bool masked = std::find(in.mlm_positions.begin(), in.mlm_positions.end(), int(p)) != in.mlm_positions.end();
      if (!masked) {
        EXPECT_EQ(in.decoder_target[p], tok::pad);
      }
    }
  }
  EXPECT_TRUE(seen_text);
  EXPECT_TRUE(seen_region);
}

TEST_F(ModelTest, LengthErrorBeyondMaxPositions) {
  auto ex = make_example(TaskType::intent, 2, config, 3, "the man opens the door");
  EXPECT_THROW(assemble_input(ex, vocab, {}, 8), LengthError);
  ex.task = TaskType::caption;
  EXPECT_THROW(assemble_input(ex, vocab, {}, config.max_positions), ValidationError);
}

TEST_F(ModelTest, ZeroFeatureSlotEqualsPositionEmbedding) {
  Model<double> model(config, Init::normal, 5);
  auto ex = make_example(TaskType::intent, 1, config, 4);
  std::fill(ex.rois[0].feat.begin(), ex.rois[0].feat.end(), 0.0F);
  const auto in = assemble_input(ex, vocab, {}, config.max_positions);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  const auto e = embed(pass, model, in, ex.rois);
  const int slot = in.visual_slots[0];
  const auto pos = model.p("embed.enc_positions").matrix().row(slot);
  EXPECT_TRUE(e.matrix().row(slot).isApprox(pos, 1e-14));

  auto bad = ex;
  bad.rois.push_back(bad.rois[0]);
  EXPECT_THROW(embed(pass, model, in, bad.rois), DimensionError);
}

TEST_F(ModelTest, EncoderIsBidirectional) {
  Model<double> model(config, Init::normal, 6, 0.5);
  auto ex = make_example(TaskType::intent, 2, config, 5);
  auto in = assemble_input(ex, vocab, {}, config.max_positions);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  const auto a = encode(pass, model, embed(pass, model, in, ex.rois), in.encoder_mask);
  in.encoder_ids[in.encoder_ids.size() - 2] = vocab.id("dog");
  const auto b = encode(pass, model, embed(pass, model, in, ex.rois), in.encoder_mask);
  EXPECT_GT((a.matrix().row(0) - b.matrix().row(0)).norm(), 1e-8);
}

TEST_F(ModelTest, EncoderIgnoresAppendedPads) {
  Model<float> model(config, Init::normal, 7, 0.5);
  auto ex = make_example(TaskType::intent, 2, config, 6);
  const auto in = assemble_input(ex, vocab, {}, config.max_positions);
  auto longer = assemble_input(make_example(TaskType::intent, 2, config, 6, "a", "the man opens the door quickly to pay the bill"),
                               vocab, {}, config.max_positions);
  const auto padded = pad_batch({in, longer})[0];
  ASSERT_GT(padded.encoder_length(), in.encoder_length());
  Tape<float> tape(false);
  Pass<float> pass{tape};
  const auto a = encode(pass, model, embed(pass, model, in, ex.rois), in.encoder_mask);
  const auto b = encode(pass, model, embed(pass, model, padded, ex.rois), padded.encoder_mask);
  for (int r = 0; r < in.encoder_length(); ++r) {
    EXPECT_LE((a.matrix().row(r) - b.matrix().row(r)).cwiseAbs().maxCoeff(), 1e-5F);
  }
}


Eigen::MatrixXd layer_norm_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(g.transpose()) + b.transpose();
  }
  return out;
}

Eigen::MatrixXd dense_ref(const Model<double>& m, const std::string& name, const Eigen::MatrixXd& x) {
  const auto& w = m.p(name + ".weight");
  const auto& b = m.p(name + ".bias");
  Eigen::MatrixXd y = x * Eigen::MatrixXd(w.matrix());
  y.rowwise() += Eigen::VectorXd(b.data().matrix()).transpose();
  return y;
}

Eigen::VectorXd vec(const Model<double>& m, const std::string& name) { return m.p(name).data().matrix(); }

TEST_F(ModelTest, SingleLayerEncoderMatchesHandComputation) {
  Model<double> model(config, Init::normal, 8, 0.3);
  for (auto& e : model.params().entries()) {
    if (e.name.find(".gain") != std::string::npos || e.name.find("norm.bias") != std::string::npos) {
      Rng rng(std::hash<std::string>{}(e.name));
      for (Index i = 0; i < e.tensor.numel(); ++i) e.tensor.data()[i] = 1.0 + 0.2 * rng.normal();
    }
  }
  // Zeroed attention output projection: the attention branch adds nothing.
  model.params().at("encoder.layers.0.self_attn.out.weight").data().setZero();
  model.params().at("encoder.layers.0.self_attn.out.bias").data().setZero();
  Tape<double> tape(false);
  Pass<double> pass{tape};
  auto x = Tensor<double>::zeros({2, config.d_model});
  Rng rng(9);
  for (Index i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
  const auto out = encode(pass, model, x, std::vector<std::uint8_t>{1, 1});

  const Eigen::MatrixXd h = x.matrix();
  const std::string l = "encoder.layers.0";
  const Eigen::MatrixXd normed = layer_norm_rows(h, vec(model, l + ".ffn_norm.gain"), vec(model, l + ".ffn_norm.bias"));
  Eigen::MatrixXd inner = dense_ref(model, l + ".ffn.fc1", normed);
  inner = inner.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
  const Eigen::MatrixXd h1 = h + dense_ref(model, l + ".ffn.fc2", inner);
  const Eigen::MatrixXd expected =
      layer_norm_rows(h1, vec(model, "encoder.final_norm.gain"), vec(model, "encoder.final_norm.bias"));
  EXPECT_LE((Eigen::MatrixXd(out.matrix()) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(ModelTest, DecoderIsCausal) {
  Model<double> model(config, Init::normal, 10, 0.5);
  auto ex = make_example(TaskType::before, 2, config, 11, "the man opens the door quickly");
  auto in = assemble_input(ex, vocab, {}, config.max_positions);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  const auto memory = encode(pass, model, embed(pass, model, in, ex.rois), in.encoder_mask);
  const auto base = decode(pass, model, in.decoder_input, in.decoder_mask, memory, in.encoder_mask);
  EXPECT_EQ(base.shape(), (Shape{in.decoder_length(), config.d_model}));
  for (int t = 1; t < in.decoder_length(); ++t) {
    auto ids = in.decoder_input;
    for (int j = t; j < in.decoder_length(); ++j) ids[j] = vocab.id("dog");
    const auto changed = decode(pass, model, ids, in.decoder_mask, memory, in.encoder_mask);
    for (int r = 0; r < t; ++r) {
      EXPECT_LE((base.matrix().row(r) - changed.matrix().row(r)).cwiseAbs().maxCoeff(), 1e-6);
    }
    EXPECT_GT((base.matrix().row(t) - changed.matrix().row(t)).norm(), 1e-9);
  }
}

TEST_F(ModelTest, ZeroedCrossAttentionIgnoresEncoder) {
  Model<double> model(config, Init::normal, 12, 0.5);
  model.params().at("decoder.layers.0.cross_attn.out.weight").data().setZero();
  auto a = make_example(TaskType::after, 2, config, 13);
  auto b = make_example(TaskType::after, 2, config, 14, "the man opens the door", "the dog is next to the table");
  const auto ia = assemble_input(a, vocab, {}, config.max_positions);
  const auto ib = assemble_input(b, vocab, {}, config.max_positions);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  const auto ha = forward(pass, model, ia, a.rois).hidden;
  const auto hb = forward(pass, model, ib, b.rois).hidden;
  EXPECT_LE((ha.data() - hb.data()).abs().maxCoeff(), 1e-12);
}

TEST_F(ModelTest, HeadsAreUniformOnZeroHidden) {
  Model<double> model(config, Init::normal, 15);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  const auto zero = Tensor<double>::zeros({3, config.d_model});
  for (const auto& logits : {lm_head(pass, model, zero), mrm_head(pass, model, zero), ap_head(pass, model, zero),
                             rp_head(pass, model, Tensor<double>::zeros({3, 2 * config.d_model}))}) {
    const auto p = softmax(tape, logits);
    EXPECT_TRUE(p.data().isApproxToConstant(1.0 / static_cast<double>(logits.cols()), 1e-15));
  }
  EXPECT_EQ(lm_head(pass, model, zero).cols(), vocab.size());
  EXPECT_EQ(mrm_head(pass, model, zero).cols(), config.n_classes);
  EXPECT_EQ(ap_head(pass, model, zero).cols(), config.n_attr);
  EXPECT_THROW(rp_head(pass, model, zero), DimensionError);
}

TEST_F(ModelTest, LmHeadIsTiedToEmbeddings) {
  Model<double> model(config, Init::normal, 16);
  Tape<double> tape(false);
  Pass<double> pass{tape};
  auto hidden = Tensor<double>::zeros({4, config.d_model});
  Rng rng(17);
  for (Index i = 0; i < hidden.numel(); ++i) hidden.data()[i] = rng.normal();
  const auto before = lm_head(pass, model, hidden);
  const int k = 20;
  model.params().at("embed.tokens").matrix().row(k).array() += 0.5;
  const auto after = lm_head(pass, model, hidden);
  const Eigen::MatrixXd diff = after.matrix() - before.matrix();
  for (Index r = 0; r < 4; ++r) {
    for (Index c = 0; c < diff.cols(); ++c) {
      if (c == k) {
        EXPECT_GT(std::abs(diff(r, c)), 1e-9);
      } else {
        EXPECT_EQ(diff(r, c), 0.0);
      }
    }
  }
}

TEST_F(ModelTest, ParameterCountMatchesClosedForm) {
  for (const auto& cfg : {ModelConfig::desk(vocab.size()), config}) {
    Model<float> model(cfg, Init::zero);
    const Index d = cfg.d_model, f = cfg.d_ffn, V = cfg.vocab_size, P = cfg.max_positions;
    const Index Le = cfg.n_enc_layers, Ld = cfg.n_dec_layers;
    const Index expected = V * d + 2 * P * d + cfg.d_visual * d + d        // embeddings, projection
                           + Le * (8 * d + 4 * d * d + 2 * d * f + f + d)  // encoder layers
                           + Ld * (14 * d + 8 * d * d + 2 * d * f + f + d)  // decoder layers
                           + 4 * d + V                                      // final norms, lm bias
                           + 4 * d * d + 3 * d                              // head hidden layers
                           + d * (cfg.n_classes + cfg.n_attr + cfg.n_rel) + cfg.n_classes + cfg.n_attr + cfg.n_rel;
    EXPECT_EQ(model.params().numel(), expected);
    EXPECT_EQ(cfg.parameter_count(), expected);
  }
  EXPECT_EQ(ModelConfig::desk(1000).parameter_count(), 768790 + 1000 * 129);
}

TEST_F(ModelTest, FiniteLogitsAndZeroInitUniform) {
  Model<float> zero(config, Init::zero);
  Model<float> normal(config, Init::normal, 18);
  auto ex = make_example(TaskType::intent, 2, config, 19);
  const auto in = assemble_input(ex, vocab, {}, config.max_positions);
  Tape<float> tape(false);
  Pass<float> pass{tape};
  const auto lz = lm_head(pass, zero, forward(pass, zero, in, ex.rois).hidden);
  EXPECT_TRUE((lz.data() == 0.0F).all());
  const auto ln = lm_head(pass, normal, forward(pass, normal, in, ex.rois).hidden);
  EXPECT_TRUE(ln.data().allFinite());
}

TEST_F(ModelTest, ConfigValidation) {
  auto bad = config;
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = config;
  bad.dropout_rate = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = config;
  bad.d_model = 32;
  bad.dropout_rate = 0.3;
  EXPECT_EQ(config.architecture_diff(bad), (std::vector<std::string>{"d_model (16 vs 32)"}));
}

}  // namespace
}  // namespace kmbart
