#include "slukd/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slukd {

std::vector<double> concat_logits(const SlotLogits& s) {
    std::vector<double> out;
    out.reserve(s.action.size() + s.object.size() + s.location.size());
    out.insert(out.end(), s.action.begin(), s.action.end());
    out.insert(out.end(), s.object.begin(), s.object.end());
    out.insert(out.end(), s.location.begin(), s.location.end());
    return out;
}

SlotLogits split_logits(const std::vector<double>& v, const SlotSpaces& spaces) {
    if (static_cast<int>(v.size()) != spaces.total())
        throw std::invalid_argument("split_logits: vector length " + std::to_string(v.size()) +
                                    " != slot total " + std::to_string(spaces.total()));
    SlotLogits s;
    s.action.assign(v.begin(), v.begin() + spaces.actions);
    s.object.assign(v.begin() + spaces.actions, v.begin() + spaces.actions + spaces.objects);
    s.location.assign(v.begin() + spaces.actions + spaces.objects, v.end());
    return s;
}

static Tensor affine_init(Rng& rng, int in_dim, int out_dim) {
    Tensor t(in_dim, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

static Tensor bias_init(Rng& rng, int in_dim, int out_dim) {
    Tensor t(1, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

// ---------------------------------------------------------------------------
// Student
// ---------------------------------------------------------------------------

StudentModel StudentModel::init(int input_dim, int hidden, SlotSpaces slots, uint64_t seed) {
    if (input_dim < 1 || hidden < 1) throw std::invalid_argument("StudentModel: bad dims");
    StudentModel m;
    m.input_dim = input_dim;
    m.hidden = hidden;
    m.slots = slots;
    Rng rng = Rng(seed).child(0x5374756465ULL);
    m.wz = affine_init(rng, input_dim, hidden);
    m.uz = affine_init(rng, hidden, hidden);
    m.bz = bias_init(rng, hidden, hidden);
    m.wr = affine_init(rng, input_dim, hidden);
    m.ur = affine_init(rng, hidden, hidden);
    m.br = bias_init(rng, hidden, hidden);
    m.wh = affine_init(rng, input_dim, hidden);
    m.uh = affine_init(rng, hidden, hidden);
    m.bh = bias_init(rng, hidden, hidden);
    m.head_action_w = affine_init(rng, hidden, slots.actions);
    m.head_action_b = bias_init(rng, hidden, slots.actions);
    m.head_object_w = affine_init(rng, hidden, slots.objects);
    m.head_object_b = bias_init(rng, hidden, slots.objects);
    m.head_location_w = affine_init(rng, hidden, slots.locations);
    m.head_location_b = bias_init(rng, hidden, slots.locations);
    return m;
}

void StudentModel::visit_params(const std::function<void(const std::string&, Tensor&)>& f) {
    f("gru.wz", wz);
    f("gru.uz", uz);
    f("gru.bz", bz);
    f("gru.wr", wr);
    f("gru.ur", ur);
    f("gru.br", br);
    f("gru.wh", wh);
    f("gru.uh", uh);
    f("gru.bh", bh);
    f("head.action.w", head_action_w);
    f("head.action.b", head_action_b);
    f("head.object.w", head_object_w);
    f("head.object.b", head_object_b);
    f("head.location.w", head_location_w);
    f("head.location.b", head_location_b);
}

StudentBatchGraph student_forward_batch(ad::Graph& g, StudentModel& m,
                                        const std::vector<const FrameSeq*>& batch) {
    if (batch.empty()) throw std::invalid_argument("student_forward: empty batch");
    const int B = static_cast<int>(batch.size());
    int max_len = 0;
    for (const FrameSeq* fs : batch) {
        if (fs->empty()) throw std::invalid_argument("student_forward: empty frame sequence");
        for (const auto& frame : *fs)
            if (static_cast<int>(frame.size()) != m.input_dim)
                throw std::invalid_argument(
                    "student_forward: frame dimension " + std::to_string(frame.size()) +
                    " != model input dimension " + std::to_string(m.input_dim));
        max_len = std::max(max_len, static_cast<int>(fs->size()));
    }

    StudentBatchGraph out;
    auto bind = [&](const std::string& name, Tensor& t) {
        out.params.push_back({name, &t, g.input(t)});
    };
    m.visit_params(bind);
    auto id_of = [&](int idx) { return out.params[idx].node; };
    const ad::NodeId wz = id_of(0), uz = id_of(1), bz = id_of(2);
    const ad::NodeId wr = id_of(3), ur = id_of(4), br = id_of(5);
    const ad::NodeId wh = id_of(6), uh = id_of(7), bh = id_of(8);

    ad::NodeId h = g.constant(Tensor(B, m.hidden));
    ad::NodeId ones_col = g.constant(Tensor(B, 1, 1.0));

    for (int t = 0; t < max_len; ++t) {
        Tensor xt(B, m.input_dim);
        Tensor mask(B, 1);
        bool any_masked = false;
        for (int i = 0; i < B; ++i) {
            if (t < static_cast<int>(batch[i]->size())) {
                const auto& frame = (*batch[i])[t];
                for (int j = 0; j < m.input_dim; ++j) xt.at(i, j) = frame[j];
                mask.data[i] = 1.0;
            } else {
                any_masked = true;
            }
        }
        ad::NodeId x = g.constant(std::move(xt));
        ad::NodeId z = g.sigmoid(g.add_rowvec(g.add(g.matmul(x, wz), g.matmul(h, uz)), bz));
        ad::NodeId r = g.sigmoid(g.add_rowvec(g.add(g.matmul(x, wr), g.matmul(h, ur)), br));
        ad::NodeId hc =
            g.tanh(g.add_rowvec(g.add(g.matmul(x, wh), g.matmul(g.mul(r, h), uh)), bh));
        // h' = (1-z) .* h + z .* candidate
        ad::NodeId ones = g.constant(Tensor(B, m.hidden, 1.0));
        ad::NodeId h_new = g.add(g.mul(g.sub(ones, z), h), g.mul(z, hc));
        if (any_masked) {
            // exhausted sequences keep their final hidden state
            ad::NodeId mcol = g.constant(std::move(mask));
            ad::NodeId keep = g.sub(ones_col, mcol);
            h = g.add(g.scale_rows(h_new, mcol), g.scale_rows(h, keep));
        } else {
            h = h_new;
        }
    }

    out.action = g.add_rowvec(g.matmul(h, id_of(9)), id_of(10));
    out.object = g.add_rowvec(g.matmul(h, id_of(11)), id_of(12));
    out.location = g.add_rowvec(g.matmul(h, id_of(13)), id_of(14));
    return out;
}

SlotLogits student_forward(StudentModel& m, const FrameSeq& frames) {
    ad::Graph g(256);
    StudentBatchGraph b = student_forward_batch(g, m, {&frames});
    SlotLogits s;
    s.action = g.value(b.action).data;
    s.object = g.value(b.object).data;
    s.location = g.value(b.location).data;
    return s;
}

// ---------------------------------------------------------------------------
// Teacher / professor
// ---------------------------------------------------------------------------

Tensor sinusoidal_positions(int length, int d_model) {
    Tensor pe(length, d_model);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < d_model; i += 2) {
            const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
            pe.at(pos, i) = std::sin(angle);
            if (i + 1 < d_model) pe.at(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

TextEncoderModel TextEncoderModel::init(HeadKind head, int vocab, SlotSpaces slots, uint64_t seed,
                                        int d_model, int n_layers, int n_heads, int ff_dim,
                                        bool positional) {
    if (vocab < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || ff_dim < 1)
        throw std::invalid_argument("TextEncoderModel: bad dims");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("TextEncoderModel: d_model must divide into heads");
    TextEncoderModel m;
    m.head = head;
    m.vocab = vocab;
    m.d_model = d_model;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.ff_dim = ff_dim;
    m.positional = positional;
    m.slots = slots;
    Rng rng = Rng(seed).child(head == HeadKind::ClsPooled ? 0x54656163ULL : 0x50726f66ULL);
    m.embedding = Tensor(vocab + 2, d_model);
    for (double& v : m.embedding.data) v = rng.normal(0.0, 0.02);
    for (int l = 0; l < n_layers; ++l) {
        EncoderLayerParams p;
        p.wq = affine_init(rng, d_model, d_model);
        p.bq = bias_init(rng, d_model, d_model);
        p.wk = affine_init(rng, d_model, d_model);
        p.bk = bias_init(rng, d_model, d_model);
        p.wv = affine_init(rng, d_model, d_model);
        p.bv = bias_init(rng, d_model, d_model);
        p.wo = affine_init(rng, d_model, d_model);
        p.bo = bias_init(rng, d_model, d_model);
        p.ff1_w = affine_init(rng, d_model, ff_dim);
        p.ff1_b = bias_init(rng, d_model, ff_dim);
        p.ff2_w = affine_init(rng, ff_dim, d_model);
        p.ff2_b = bias_init(rng, ff_dim, d_model);
        p.ln1_gain = Tensor(1, d_model, 1.0);
        p.ln1_bias = Tensor(1, d_model, 0.0);
        p.ln2_gain = Tensor(1, d_model, 1.0);
        p.ln2_bias = Tensor(1, d_model, 0.0);
        m.layers.push_back(std::move(p));
    }
    m.head_w = affine_init(rng, d_model, slots.total());
    m.head_b = bias_init(rng, d_model, slots.total());
    return m;
}

void TextEncoderModel::visit_params(const std::function<void(const std::string&, Tensor&)>& f) {
    f("embedding", embedding);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        EncoderLayerParams& lp = layers[l];
        f(p + "wq", lp.wq);
        f(p + "bq", lp.bq);
        f(p + "wk", lp.wk);
        f(p + "bk", lp.bk);
        f(p + "wv", lp.wv);
        f(p + "bv", lp.bv);
        f(p + "wo", lp.wo);
        f(p + "bo", lp.bo);
        f(p + "ff1_w", lp.ff1_w);
        f(p + "ff1_b", lp.ff1_b);
        f(p + "ff2_w", lp.ff2_w);
        f(p + "ff2_b", lp.ff2_b);
        f(p + "ln1_gain", lp.ln1_gain);
        f(p + "ln1_bias", lp.ln1_bias);
        f(p + "ln2_gain", lp.ln2_gain);
        f(p + "ln2_bias", lp.ln2_bias);
    }
    f("head.w", head_w);
    f("head.b", head_b);
}

EncoderBatchGraph encoder_forward_batch(ad::Graph& g, TextEncoderModel& m,
                                        const std::vector<const TokenSeq*>& batch,
                                        EncoderTrace* trace) {
    if (batch.empty()) throw std::invalid_argument("encoder_forward: empty batch");
    for (const TokenSeq* seq : batch) {
        if (seq->empty()) throw std::invalid_argument("encoder_forward: empty token sequence");
        bool saw_pad = false;
        for (int id : *seq) {
            if (id == m.pad_id()) {
                saw_pad = true;
                continue;
            }
            if (saw_pad)
                throw std::invalid_argument("encoder_forward: [PAD] only allowed as a suffix");
            if (id < 0 || id >= m.vocab)
                throw std::invalid_argument("encoder_forward: token id " + std::to_string(id) +
                                            " outside vocabulary of " + std::to_string(m.vocab));
        }
        if (static_cast<size_t>(std::count(seq->begin(), seq->end(), m.pad_id())) == seq->size())
            throw std::invalid_argument("encoder_forward: all-pad token sequence");
    }

    EncoderBatchGraph out;
    auto bind = [&](const std::string& name, Tensor& t) {
        out.params.push_back({name, &t, g.input(t)});
    };
    m.visit_params(bind);
    const ad::NodeId embedding = out.params[0].node;
    const int per_layer = 16;
    auto layer_id = [&](int layer, int k) { return out.params[1 + layer * per_layer + k].node; };
    const ad::NodeId head_w = out.params[1 + m.n_layers * per_layer].node;
    const ad::NodeId head_b = out.params[2 + m.n_layers * per_layer].node;

    const int dk = m.d_model / m.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dk));

    std::vector<ad::NodeId> act_rows, obj_rows, loc_rows;
    for (const TokenSeq* seq : batch) {
        // [CLS] + tokens; pads participate in the stack but are masked out of
        // attention and excluded from professor pooling.
        std::vector<int> ids;
        ids.reserve(seq->size() + 1);
        ids.push_back(m.cls_id());
        int n_real = 0;
        for (int id : *seq) {
            ids.push_back(id);
            if (id != m.pad_id()) ++n_real;
        }
        const int S = static_cast<int>(ids.size());

        ad::NodeId x = g.embedding(embedding, ids);
        if (m.positional) x = g.add(x, g.constant(sinusoidal_positions(S, m.d_model)));

        const bool has_pad = n_real + 1 < S;
        ad::NodeId att_mask = -1;
        if (has_pad) {
            Tensor mask(S, S);
            for (int i = 0; i < S; ++i)
                for (int j = 0; j < S; ++j)
                    if (ids[j] == m.pad_id()) mask.at(i, j) = -1e30;
            att_mask = g.constant(std::move(mask));
        }

        for (int l = 0; l < m.n_layers; ++l) {
            ad::NodeId q = g.add_rowvec(g.matmul(x, layer_id(l, 0)), layer_id(l, 1));
            ad::NodeId k = g.add_rowvec(g.matmul(x, layer_id(l, 2)), layer_id(l, 3));
            ad::NodeId v = g.add_rowvec(g.matmul(x, layer_id(l, 4)), layer_id(l, 5));
            std::vector<ad::NodeId> ctx_heads;
            for (int h = 0; h < m.n_heads; ++h) {
                ad::NodeId qh = g.slice_cols(q, h * dk, dk);
                ad::NodeId kh = g.slice_cols(k, h * dk, dk);
                ad::NodeId vh = g.slice_cols(v, h * dk, dk);
                ad::NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), att_scale);
                if (has_pad) scores = g.add(scores, att_mask);
                ad::NodeId att = g.softmax_rows(scores);
                if (trace) trace->attention.push_back(att);
                ctx_heads.push_back(g.matmul(att, vh));
            }
            ad::NodeId ctx = m.n_heads == 1 ? ctx_heads[0] : g.concat_cols(ctx_heads);
            if (trace) trace->attn_ctx.push_back(ctx);
            ad::NodeId att_out = g.add_rowvec(g.matmul(ctx, layer_id(l, 6)), layer_id(l, 7));
            x = g.layer_norm_rows(g.add(x, att_out), layer_id(l, 12), layer_id(l, 13));
            if (trace) trace->ln_outputs.push_back(x);
            ad::NodeId ff = g.add_rowvec(
                g.matmul(g.relu(g.add_rowvec(g.matmul(x, layer_id(l, 8)), layer_id(l, 9))),
                         layer_id(l, 10)),
                layer_id(l, 11));
            x = g.layer_norm_rows(g.add(x, ff), layer_id(l, 14), layer_id(l, 15));
            if (trace) trace->ln_outputs.push_back(x);
        }

        ad::NodeId logits;  // 1 x total
        if (m.head == HeadKind::ClsPooled) {
            ad::NodeId cls = g.slice_rows(x, 0, 1);
            logits = g.add_rowvec(g.matmul(cls, head_w), head_b);
        } else {
            // per-token head over the real (non-pad, non-CLS) positions, then max pool
            ad::NodeId toks = g.slice_rows(x, 1, n_real);
            ad::NodeId per_pos = g.add_rowvec(g.matmul(toks, head_w), head_b);
            if (trace) trace->per_position_logits.push_back(per_pos);
            logits = g.max_pool_rows(per_pos);
        }
        act_rows.push_back(g.slice_cols(logits, 0, m.slots.actions));
        obj_rows.push_back(g.slice_cols(logits, m.slots.actions, m.slots.objects));
        loc_rows.push_back(
            g.slice_cols(logits, m.slots.actions + m.slots.objects, m.slots.locations));
    }

    out.action = act_rows.size() == 1 ? act_rows[0] : g.concat_rows(act_rows);
    out.object = obj_rows.size() == 1 ? obj_rows[0] : g.concat_rows(obj_rows);
    out.location = loc_rows.size() == 1 ? loc_rows[0] : g.concat_rows(loc_rows);
    return out;
}

SlotLogits encoder_forward(TextEncoderModel& m, const TokenSeq& tokens) {
    ad::Graph g(512);
    EncoderBatchGraph b = encoder_forward_batch(g, m, {&tokens});
    SlotLogits s;
    s.action = g.value(b.action).data;
    s.object = g.value(b.object).data;
    s.location = g.value(b.location).data;
    return s;
}

}  // namespace slukd
