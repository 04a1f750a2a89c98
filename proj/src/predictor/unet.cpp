#include "tsg/predictor/unet.hpp"

#include <algorithm>
#include <variant>

#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"

namespace tsg::predictor {

using namespace tsg::nn;

void UNetConfig::validate() const {
    auto fail = [](const std::string& m) { throw ModelError("invalid U-Net config: " + m); };
    if (image_size <= 0 || in_channels <= 0 || out_channels <= 0 || model_channels <= 0) fail("non-positive dimension");
    if (num_res_blocks < 1) fail("num_res_blocks must be >= 1");
    if (channel_mult.empty()) fail("channel_mult is empty");
    for (int m : channel_mult)
        if (m <= 0) fail("channel_mult entries must be positive");
    if (image_size % (1 << depth()) != 0)
        fail("image_size " + std::to_string(image_size) + " not divisible by 2^" + std::to_string(depth()));
    if (norm_groups <= 0) fail("norm_groups must be positive");
    for (int m : channel_mult)
        if ((m * model_channels) % norm_groups != 0) fail("channel counts must be divisible by norm_groups");
    if (num_head_channels <= 0 && num_heads <= 0) fail("need num_heads or num_head_channels");
    if (time_embed_channels < 0) fail("time_embed_channels must be >= 0");
}

json to_json(const UNetConfig& c) {
    return {{"image_size", c.image_size},
            {"in_channels", c.in_channels},
            {"model_channels", c.model_channels},
            {"out_channels", c.out_channels},
            {"num_res_blocks", c.num_res_blocks},
            {"attention_resolutions", c.attention_resolutions},
            {"channel_mult", c.channel_mult},
            {"conv_resample", c.conv_resample},
            {"num_heads", c.num_heads},
            {"num_head_channels", c.num_head_channels},
            {"use_scale_shift_norm", c.use_scale_shift_norm},
            {"resblock_updown", c.resblock_updown},
            {"norm_groups", c.norm_groups},
            {"middle_attention", c.middle_attention},
            {"time_embed_channels", c.time_embed_channels}};
}

UNetConfig unet_config_from_json(const json& j) {
    UNetConfig c;
    try {
        c.image_size = j.at("image_size");
        c.in_channels = j.at("in_channels");
        c.model_channels = j.at("model_channels");
        c.out_channels = j.at("out_channels");
        c.num_res_blocks = j.at("num_res_blocks");
        c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
        c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
        c.conv_resample = j.at("conv_resample");
        c.num_heads = j.at("num_heads");
        c.num_head_channels = j.at("num_head_channels");
        c.use_scale_shift_norm = j.at("use_scale_shift_norm");
        c.resblock_updown = j.at("resblock_updown");
        c.norm_groups = j.value("norm_groups", 32);
        c.middle_attention = j.value("middle_attention", true);
        c.time_embed_channels = j.value("time_embed_channels", 0);
    } catch (const json::exception& e) {
        throw ModelError(std::string("malformed U-Net config: ") + e.what());
    }
    c.validate();
    return c;
}

UNetConfig adm_256_uncond() {
    UNetConfig c;
    c.image_size = 256;
    c.model_channels = 256;
    c.out_channels = 6;
    c.num_res_blocks = 2;
    c.attention_resolutions = {8, 16, 32};
    c.channel_mult = {1, 1, 2, 2, 4, 4};
    c.num_heads = 4;
    c.num_head_channels = 64;
    c.use_scale_shift_norm = true;
    c.resblock_updown = true;
    c.norm_groups = 32;
    return c;
}

namespace {

enum class Resample { none, up, down };

struct ResBlock {
    GroupNorm in_norm, out_norm;
    Conv2d in_conv, out_conv, skip;
    Linear emb;
    Resample resample = Resample::none;
    bool scale_shift = false;
    int out_ch = 0;

    ResBlock(ParameterStore& ps, const std::string& name, const UNetConfig& cfg, int ch, int out, Resample r, Rng& rng)
        : resample(r), scale_shift(cfg.use_scale_shift_norm), out_ch(out) {
        in_norm = GroupNorm(ps, name + ".in_layers.0", cfg.norm_groups, ch);
        in_conv = Conv2d(ps, name + ".in_layers.2", ch, out, 3, 1, 1, true, rng);
        emb = Linear(ps, name + ".emb_layers.1", cfg.time_embed_dim(), scale_shift ? 2 * out : out, rng);
        out_norm = GroupNorm(ps, name + ".out_layers.0", cfg.norm_groups, out);
        out_conv = Conv2d(ps, name + ".out_layers.3", out, out, 3, 1, 1, true, rng, Init::zeros);
        if (out != ch) skip = Conv2d(ps, name + ".skip_connection", ch, out, 1, 1, 0, true, rng);
    }

    static Var resample_op(const Var& v, Resample r) {
        if (r == Resample::up) return upsample_nearest2x(v);
        if (r == Resample::down) return avg_pool2x2(v);
        return v;
    }

    Var operator()(const Var& x, const Var& emb_act) const {
        Var h = silu(in_norm(x));
        h = in_conv(resample_op(h, resample));
        Var xs = resample_op(x, resample);
        Var e = emb(emb_act);
        if (scale_shift) {
            h = scale_shift_norm(h, e);
        } else {
            h = add_channelwise(h, e);
            h = silu(out_norm(h));
        }
        h = out_conv(h);
        return add(skip.weight ? skip(xs) : xs, h);
    }

    Var scale_shift_norm(const Var& h, const Var& e) const {
        Var scale = slice_channels(e, 0, out_ch);
        Var shift = slice_channels(e, out_ch, out_ch);
        return silu(nn::scale_shift(out_norm(h), scale, shift));
    }
};

struct AttentionBlock {
    GroupNorm norm;
    Var qkv_w, qkv_b, proj_w, proj_b;
    int heads = 1;

    AttentionBlock(ParameterStore& ps, const std::string& name, const UNetConfig& cfg, int ch, Rng& rng) {
        heads = cfg.num_head_channels > 0 ? ch / cfg.num_head_channels : cfg.num_heads;
        if (cfg.num_head_channels > 0 && ch % cfg.num_head_channels != 0)
            throw ModelError(name + ": channels not divisible by num_head_channels");
        if (ch % heads != 0) throw ModelError(name + ": channels not divisible by heads");
        norm = GroupNorm(ps, name + ".norm", cfg.norm_groups, ch);
        qkv_w = ps.create(name + ".qkv.weight", {3 * ch, ch, 1});
        initialize(qkv_w, Init::torch_default, rng);
        qkv_b = ps.create(name + ".qkv.bias", {3 * ch});
        initialize_bias(qkv_b, ch, rng);
        proj_w = ps.create(name + ".proj_out.weight", {ch, ch, 1});
        proj_b = ps.create(name + ".proj_out.bias", {ch});
    }

    Var operator()(const Var& x) const {
        const Shape s = x.shape();
        Var flat = reshape(x, {s[0], s[1], s[2] * s[3]});
        Var qkv = pointwise_conv(norm(flat), qkv_w, qkv_b);
        Var h = pointwise_conv(qkv_attention(qkv, heads), proj_w, proj_b);
        return reshape(add(flat, h), s);
    }
};

struct Downsample {
    Conv2d op;
    bool use_conv = false;
    Var operator()(const Var& x) const { return use_conv ? op(x) : avg_pool2x2(x); }
};

struct Upsample {
    Conv2d conv;
    bool use_conv = false;
    Var operator()(const Var& x) const {
        Var h = upsample_nearest2x(x);
        return use_conv ? conv(h) : h;
    }
};

using Layer = std::variant<Conv2d, ResBlock, AttentionBlock, Downsample, Upsample>;
using Block = std::vector<Layer>;

Var run_block(const Block& block, Var h, const Var& emb_act) {
    for (const Layer& layer : block) {
        h = std::visit(
            [&](const auto& l) -> Var {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, ResBlock>) return l(h, emb_act);
                else return l(h);
            },
            layer);
    }
    return h;
}

}  // namespace

struct UNet::Impl {
    UNetConfig cfg;
    ParameterStore store;
    Linear time_0, time_2;
    std::vector<Block> input_blocks, output_blocks;
    Block middle;
    GroupNorm out_norm;
    Conv2d out_conv;

    Impl(const UNetConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        Rng rng = make_rng(seed, "unet-init");
        const int mc = cfg.model_channels;
        time_0 = Linear(store, "time_embed.0", mc, cfg.time_embed_dim(), rng);
        time_2 = Linear(store, "time_embed.2", cfg.time_embed_dim(), cfg.time_embed_dim(), rng);

        auto has_attn = [&](int ds) {
            return std::find(cfg.attention_resolutions.begin(), cfg.attention_resolutions.end(), ds) !=
                   cfg.attention_resolutions.end();
        };
        auto name_of = [](const std::string& base, std::size_t i, std::size_t j) {
            return base + "." + std::to_string(i) + "." + std::to_string(j);
        };

        int ch = static_cast<int>(cfg.channel_mult[0]) * mc;
        std::vector<int> chans{ch};
        input_blocks.push_back({Conv2d(store, "input_blocks.0.0", cfg.in_channels, ch, 3, 1, 1, true, rng)});
        int ds = 1;
        const int levels = static_cast<int>(cfg.channel_mult.size());
        for (int level = 0; level < levels; ++level) {
            for (int r = 0; r < cfg.num_res_blocks; ++r) {
                const std::size_t idx = input_blocks.size();
                Block b;
                const int out = cfg.channel_mult[level] * mc;
                b.emplace_back(ResBlock(store, name_of("input_blocks", idx, 0), cfg, ch, out, Resample::none, rng));
                ch = out;
                if (has_attn(ds)) b.emplace_back(AttentionBlock(store, name_of("input_blocks", idx, 1), cfg, ch, rng));
                input_blocks.push_back(std::move(b));
                chans.push_back(ch);
            }
            if (level != levels - 1) {
                const std::size_t idx = input_blocks.size();
                const std::string n = name_of("input_blocks", idx, 0);
                Block b;
                if (cfg.resblock_updown) {
                    b.emplace_back(ResBlock(store, n, cfg, ch, ch, Resample::down, rng));
                } else {
                    Downsample d;
                    d.use_conv = cfg.conv_resample;
                    if (d.use_conv) d.op = Conv2d(store, n + ".op", ch, ch, 3, 2, 1, true, rng);
                    b.emplace_back(std::move(d));
                }
                input_blocks.push_back(std::move(b));
                chans.push_back(ch);
                ds *= 2;
            }
        }

        middle.emplace_back(ResBlock(store, "middle_block.0", cfg, ch, ch, Resample::none, rng));
        if (cfg.middle_attention) {
            middle.emplace_back(AttentionBlock(store, "middle_block.1", cfg, ch, rng));
            middle.emplace_back(ResBlock(store, "middle_block.2", cfg, ch, ch, Resample::none, rng));
        } else {
            middle.emplace_back(ResBlock(store, "middle_block.1", cfg, ch, ch, Resample::none, rng));
        }

        for (int level = levels - 1; level >= 0; --level) {
            for (int r = 0; r <= cfg.num_res_blocks; ++r) {
                const std::size_t idx = output_blocks.size();
                const int skip_ch = chans.back();
                chans.pop_back();
                const int out = cfg.channel_mult[level] * mc;
                Block b;
                b.emplace_back(ResBlock(store, name_of("output_blocks", idx, 0), cfg, ch + skip_ch, out, Resample::none, rng));
                ch = out;
                if (has_attn(ds)) b.emplace_back(AttentionBlock(store, name_of("output_blocks", idx, 1), cfg, ch, rng));
                if (level > 0 && r == cfg.num_res_blocks) {
                    const std::string n = name_of("output_blocks", idx, b.size());
                    if (cfg.resblock_updown) {
                        b.emplace_back(ResBlock(store, n, cfg, ch, ch, Resample::up, rng));
                    } else {
                        Upsample u;
                        u.use_conv = cfg.conv_resample;
                        if (u.use_conv) u.conv = Conv2d(store, n + ".conv", ch, ch, 3, 1, 1, true, rng);
                        b.emplace_back(std::move(u));
                    }
                    ds /= 2;
                }
                output_blocks.push_back(std::move(b));
            }
        }

        out_norm = GroupNorm(store, "out.0", cfg.norm_groups, ch);
        out_conv = Conv2d(store, "out.2", cfg.channel_mult[0] * mc, cfg.out_channels, 3, 1, 1, true, rng, Init::zeros);
    }
};

UNet::UNet(const UNetConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>(cfg, seed)) {}
UNet::~UNet() = default;
UNet::UNet(UNet&&) noexcept = default;
UNet& UNet::operator=(UNet&&) noexcept = default;

const UNetConfig& UNet::config() const noexcept { return impl_->cfg; }
ParameterStore& UNet::parameters() noexcept { return impl_->store; }
const ParameterStore& UNet::parameters() const noexcept { return impl_->store; }

Var UNet::forward(const Var& x, std::span<const float> timesteps) const {
    const Impl& m = *impl_;
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != m.cfg.in_channels)
        throw ModelError("U-Net expects [N, " + std::to_string(m.cfg.in_channels) + ", H, W], got " + to_string(s));
    if (static_cast<std::size_t>(s[0]) != timesteps.size())
        throw ModelError("U-Net needs one timestep per image");
    const int div = 1 << m.cfg.depth();
    if (s[2] % div != 0 || s[3] % div != 0) throw ModelError("spatial size must be divisible by " + std::to_string(div));

    Var temb(timestep_embedding(timesteps, m.cfg.model_channels));
    Var emb = m.time_2(silu(m.time_0(temb)));
    Var emb_act = silu(emb);

    std::vector<Var> hs;
    Var h = x;
    for (const Block& b : m.input_blocks) {
        h = run_block(b, h, emb_act);
        hs.push_back(h);
    }
    h = run_block(m.middle, h, emb_act);
    for (const Block& b : m.output_blocks) {
        h = concat_channels(h, hs.back());
        hs.pop_back();
        h = run_block(b, h, emb_act);
    }
    return m.out_conv(silu(m.out_norm(h)));
}

}  // namespace tsg::predictor
