#pragma once

// Deterministic toy text-to-image backend.
//
// Encoder: token + position embeddings followed by `layers` causal
// self-attention layers. Generator: a latent of `image_tokens` rows refined
// for `steps` steps by `layers` attention blocks per step, either as
// cross-attention (image queries over static text keys) or as joint MM-DiT
// self-attention over [text; image] where both streams are updated.
//
// Every weight and latent comes from a splitmix counter stream, so results are
// bit-reproducible from (config, inputs, seed).

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "padprobe/backend.hpp"

namespace padprobe {

namespace toy {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr std::uint64_t kVocab = 50000;

enum Tag : std::uint64_t {
    kTagToken = 0x746f6b,
    kTagPosition = 0x706f73,
    kTagEncoder = 0x656e63,
    kTagGenerator = 0x67656e,
    kTagStep = 0x737470,
    kTagLatent = 0x6c6174,
};

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline TokenId word_id(std::string_view word) {
    return static_cast<TokenId>(3 + detail::fnv1a64(word) % (kVocab - 3));
}

/// Lower-cased word tokenizer, truncating to fit, padded to `n`.
inline PaddedPrompt tokenize(std::string_view text, std::size_t n, bool special_tokens) {
    const std::size_t specials = special_tokens ? 2 : 0;
    auto words = split_words(text);
    if (words.size() + specials > n) words.resize(n - specials);

    std::vector<TokenId> tokens;
    std::vector<Segment> segments;
    std::vector<std::string> pieces;
    auto push = [&](TokenId t, Segment s, std::string piece) {
        tokens.push_back(t);
        segments.push_back(s);
        pieces.push_back(std::move(piece));
    };
    if (special_tokens) push(kBosId, Segment::Bos, "<bos>");
    for (auto& w : words) push(word_id(w), Segment::Prompt, w);
    if (special_tokens) push(kEosId, Segment::Eos, "<eos>");
    while (tokens.size() < n) push(kPadId, Segment::Pad, "<pad>");
    return PaddedPrompt(std::move(tokens), std::move(segments), std::string(text), kPadId,
                        std::move(pieces));
}

inline std::vector<float> seeded_vector(std::uint64_t key, std::size_t d, double scale) {
    detail::SplitMixStream rng(key);
    std::vector<float> v(d);
    for (float& x : v) x = static_cast<float>(rng.next_symmetric() * scale);
    return v;
}

// Entries uniform with variance 1/d; `identity_weight` adds a scaled identity.
inline Matrix seeded_weight(std::uint64_t key, std::size_t d, double noise = 1.0,
                            double identity_weight = 0.0) {
    detail::SplitMixStream rng(key);
    Matrix w(d, d);
    const double scale = noise * std::sqrt(3.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            w(i, j) = static_cast<float>(rng.next_symmetric() * scale + (i == j ? identity_weight : 0.0));
    return w;
}

struct Projections {
    Matrix q, k, v, o;
};

inline Projections make_projections(std::uint64_t key, std::size_t d, bool residual_friendly) {
    if (residual_friendly)
        return {seeded_weight(detail::mix(key, 0), d), seeded_weight(detail::mix(key, 1), d),
                seeded_weight(detail::mix(key, 2), d, 0.3, 1.0),
                seeded_weight(detail::mix(key, 3), d, 0.3, 1.0)};
    return {seeded_weight(detail::mix(key, 0), d), seeded_weight(detail::mix(key, 1), d),
            seeded_weight(detail::mix(key, 2), d), seeded_weight(detail::mix(key, 3), d)};
}

struct Weights {
    std::vector<Projections> encoder;
    std::vector<Projections> image;  // cross-attention, or image side of joint attention
    std::vector<Projections> text;   // text side of joint attention (MM-DiT only)
    Matrix step_embedding;           // steps x d

    explicit Weights(const BackendConfig& c) {
        const std::uint64_t ws = c.weight_seed;
        for (std::size_t l = 0; l < c.layers; ++l) {
            encoder.push_back(make_projections(detail::mix(ws, kTagEncoder, l), c.d, false));
            image.push_back(make_projections(detail::mix(ws, kTagGenerator, l, 0), c.d, true));
            if (c.kind == BackendKind::ToyMmdit)
                text.push_back(make_projections(detail::mix(ws, kTagGenerator, l, 1), c.d, true));
        }
        step_embedding = Matrix(c.steps, c.d);
        for (std::size_t s = 0; s < c.steps; ++s) {
            auto v = seeded_vector(detail::mix(ws, kTagStep, s), c.d, 0.5);
            std::copy(v.begin(), v.end(), step_embedding.row(s).begin());
        }
    }
};

// softmax(gain * q k^T / sqrt(d)), optionally causal. Returns (rows(q) x rows(k)).
inline Matrix attention_map(const Matrix& q, const Matrix& k, double gain, bool causal) {
    const double scale = gain / std::sqrt(static_cast<double>(q.cols()));
    Matrix a(q.rows(), k.rows());
    std::vector<double> logits(k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        const std::size_t visible = causal ? i + 1 : k.rows();
        for (std::size_t j = 0; j < visible; ++j) logits[j] = scale * linalg::dot(q.row(i), k.row(j));
        linalg::softmax(std::span<double>(logits.data(), visible));
        for (std::size_t j = 0; j < visible; ++j) a(i, j) = static_cast<float>(logits[j]);
    }
    return a;
}

inline void add_inplace(Matrix& x, const Matrix& delta) {
    auto xs = x.data();
    auto ds = delta.data();
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += ds[i];
}

inline Matrix row_slice(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(count, m.cols());
    for (std::size_t r = 0; r < count; ++r) {
        auto src = m.row(first + r);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.data().begin(), top.data().end(), out.data().begin());
    std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(top.data().size()));
    return out;
}

class Context final : public GenerationContext {
public:
    Context(std::shared_ptr<const Weights> weights, const BackendConfig& config,
            std::string config_hash, Matrix conditioning, std::uint64_t seed, CaptureOptions capture)
        : weights_(std::move(weights)),
          config_(config),
          config_hash_(std::move(config_hash)),
          conditioning_(std::move(conditioning)),
          text_(conditioning_),
          seed_(seed),
          capture_(std::move(capture)) {
        image_ = Matrix(config_.image_tokens, config_.d);
        detail::SplitMixStream rng(detail::mix(seed, kTagLatent));
        for (float& x : image_.data()) x = static_cast<float>(rng.next_symmetric() * std::sqrt(3.0));
    }

    bool done() const override { return pos_.step >= config_.steps; }
    BlockPosition position() const override { return pos_; }
    Matrix& text_stream() override { return text_; }
    const Matrix& image_stream() const override { return image_; }

    void advance() override {
        if (done()) fail(ErrorCode::BackendError, "generation already complete");
        if (pos_.layer == 0) {
            for (std::size_t r = 0; r < image_.rows(); ++r) {
                auto row = image_.row(r);
                auto emb = weights_->step_embedding.row(pos_.step);
                for (std::size_t c = 0; c < row.size(); ++c) row[c] += emb[c];
            }
        }
        if (config_.kind == BackendKind::ToyXattn)
            cross_attention_block();
        else
            joint_attention_block();

        if (++pos_.layer == config_.layers) {
            pos_.layer = 0;
            ++pos_.step;
        }
        // Cross-attention text never changes; each block sees the input
        // conditioning again regardless of what a hook wrote last time.
        if (config_.kind == BackendKind::ToyXattn) text_ = conditioning_;
    }

    GenerationResult finish() override {
        if (!done()) fail(ErrorCode::BackendError, "generation not complete");
        std::vector<float> pooled(config_.d);
        for (std::size_t c = 0; c < config_.d; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < image_.rows(); ++r) acc += image_(r, c);
            pooled[c] = static_cast<float>(acc / static_cast<double>(image_.rows()));
        }
        GenerationResult out;
        out.features = linalg::normalized(pooled);
        out.latent = image_;
        out.seed = seed_;
        out.backend_id = config_.id;
        out.config_hash = config_hash_;
        out.attention = std::move(records_);
        return out;
    }

private:
    void record(Matrix map, std::vector<TokenKind> qk, std::vector<TokenKind> kk) {
        if (!capture_.attention || !capture_.filter.accepts(pos_.step, pos_.layer, 0)) return;
        records_.push_back({pos_.step, pos_.layer, 0, std::move(map), std::move(qk), std::move(kk)});
    }

    void cross_attention_block() {
        const auto& w = weights_->image[pos_.layer];
        const Matrix q = linalg::matmul(image_, w.q);
        const Matrix k = linalg::matmul(text_, w.k);
        const Matrix v = linalg::matmul(text_, w.v);
        Matrix a = attention_map(q, k, config_.qk_gain, false);
        add_inplace(image_, linalg::matmul(linalg::matmul(a, v), w.o));
        linalg::rms_normalize_rows(image_);
        record(std::move(a), std::vector<TokenKind>(image_.rows(), TokenKind::Image),
               std::vector<TokenKind>(text_.rows(), TokenKind::Text));
    }

    void joint_attention_block() {
        const auto& wi = weights_->image[pos_.layer];
        const auto& wt = weights_->text[pos_.layer];
        const Matrix q = stack_rows(linalg::matmul(text_, wt.q), linalg::matmul(image_, wi.q));
        const Matrix k = stack_rows(linalg::matmul(text_, wt.k), linalg::matmul(image_, wi.k));
        const Matrix v = stack_rows(linalg::matmul(text_, wt.v), linalg::matmul(image_, wi.v));
        Matrix a = attention_map(q, k, config_.qk_gain, false);
        const Matrix mixed = linalg::matmul(a, v);
        const std::size_t nt = text_.rows();
        add_inplace(text_, linalg::matmul(row_slice(mixed, 0, nt), wt.o));
        add_inplace(image_, linalg::matmul(row_slice(mixed, nt, image_.rows()), wi.o));
        linalg::rms_normalize_rows(text_);
        linalg::rms_normalize_rows(image_);

        std::vector<TokenKind> kinds(nt, TokenKind::Text);
        kinds.resize(nt + image_.rows(), TokenKind::Image);
        record(std::move(a), kinds, kinds);
    }

    std::shared_ptr<const Weights> weights_;
    BackendConfig config_;
    std::string config_hash_;
    Matrix conditioning_;
    Matrix text_;
    Matrix image_;
    std::uint64_t seed_;
    CaptureOptions capture_;
    BlockPosition pos_;
    std::vector<AttentionRecord> records_;
};

}  // namespace toy

class ToyBackend final : public Backend {
public:
    explicit ToyBackend(const BackendConfig& config)
        : Backend(checked(config), capabilities_for(config.kind)),
          weights_(std::make_shared<const toy::Weights>(this->config())) {}

    static std::shared_ptr<const ToyBackend> create(const BackendConfig& config) {
        return std::make_shared<const ToyBackend>(config);
    }

    std::string encoder_id() const {
        return "toy-encoder/d" + std::to_string(config().d) + "/w" + std::to_string(config().weight_seed);
    }

    PaddedPrompt tokenize(std::string_view text) const override {
        return toy::tokenize(text, config().n, config().special_tokens);
    }

    Conditioning encode(const PaddedPrompt& prompt) const override {
        const auto& c = config();
        if (prompt.size() != c.n)
            fail(ErrorCode::LengthMismatch, "prompt length " + std::to_string(prompt.size()) +
                                                " != backend N " + std::to_string(c.n));
        Matrix x(c.n, c.d);
        for (std::size_t p = 0; p < c.n; ++p) {
            const auto tok = toy::seeded_vector(
                detail::mix(c.weight_seed, toy::kTagToken, static_cast<std::uint64_t>(prompt.tokens()[p])),
                c.d, std::sqrt(3.0));
            const auto pos = toy::seeded_vector(detail::mix(c.weight_seed, toy::kTagPosition, p), c.d,
                                                std::sqrt(3.0));
            auto row = x.row(p);
            for (std::size_t j = 0; j < c.d; ++j) row[j] = tok[j] + pos[j];
        }
        for (const auto& w : weights_->encoder) {
            const Matrix q = linalg::matmul(x, w.q);
            const Matrix k = linalg::matmul(x, w.k);
            const Matrix v = linalg::matmul(x, w.v);
            const Matrix a = toy::attention_map(q, k, 1.0, true);
            toy::add_inplace(x, linalg::matmul(linalg::matmul(a, v), w.o));
            linalg::rms_normalize_rows(x);
        }
        const bool clean = prompt.k() == 0;
        return {{EncodedRep(std::move(x), {prompt.segments().begin(), prompt.segments().end()},
                            clean ? RepSource::Clean : RepSource::Full, encoder_id())}};
    }

    std::unique_ptr<GenerationContext> begin(const Conditioning& cond, std::uint64_t seed,
                                             const CaptureOptions& capture = {}) const override {
        const auto& primary = cond.primary();
        if (primary.n() != config().n || primary.d() != config().d)
            fail(ErrorCode::DimensionMismatch,
                 "conditioning is " + std::to_string(primary.n()) + "x" + std::to_string(primary.d()) +
                     ", backend expects " + std::to_string(config().n) + "x" + std::to_string(config().d));
        return std::make_unique<toy::Context>(weights_, config(), config_hash(), primary.matrix(), seed,
                                              capture);
    }

private:
    static BackendConfig checked(const BackendConfig& c) {
        c.validate();
        if (c.kind == BackendKind::External)
            fail(ErrorCode::ConfigError, "ToyBackend requires a toy kind");
        return c;
    }

    static Capabilities capabilities_for(BackendKind kind) {
        Capabilities caps;
        caps.encoder_output_conditioning = true;
        caps.attention_capture = true;
        caps.per_layer_text_stream = kind == BackendKind::ToyMmdit;
        caps.static_text_stream = kind == BackendKind::ToyXattn;
        return caps;
    }

    std::shared_ptr<const toy::Weights> weights_;
};

}  // namespace padprobe
