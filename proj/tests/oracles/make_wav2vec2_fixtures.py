"""Builds two tiny random-weight wav2vec 2.0 models with Hugging Face
transformers and records their mean-pooled final-layer outputs.

w2v_group:  group-norm feature encoder, post-LN transformer (the "base"
            layout), saved with legacy weight_g / weight_v tensor names and a
            "wav2vec2." prefix, as in CTC checkpoints.
w2v_stable: layer-norm feature encoder, pre-LN ("stable") transformer,
            odd positional kernel, saved with parametrization tensor names.
"""
import json
import os
import numpy as np
import torch
from safetensors.torch import save_file
from transformers import Wav2Vec2Config, Wav2Vec2Model

root = os.path.join(os.path.dirname(__file__), "..", "data")
torch.manual_seed(3)
rng = np.random.default_rng(11)

common = dict(conv_dim=(16, 16, 16), conv_kernel=(10, 3, 3), conv_stride=(5, 2, 2),
              hidden_size=24, num_hidden_layers=2, intermediate_size=48,
              num_conv_pos_embedding_groups=4, hidden_dropout=0.0, attention_dropout=0.0,
              activation_dropout=0.0, feat_proj_dropout=0.0, layerdrop=0.0)
configs = {
    "w2v_group": Wav2Vec2Config(**common, num_attention_heads=4, num_conv_pos_embeddings=16,
                                feat_extract_norm="group", do_stable_layer_norm=False,
                                conv_bias=False),
    "w2v_stable": Wav2Vec2Config(**common, num_attention_heads=3, num_conv_pos_embeddings=15,
                                 feat_extract_norm="layer", do_stable_layer_norm=True,
                                 conv_bias=True),
}

waves = [0.3 * np.sin(2 * np.pi * 180 * np.arange(3000) / 16000) + 0.05 * rng.standard_normal(3000),
         0.1 * rng.standard_normal(1234)]

for name, cfg in configs.items():
    model = Wav2Vec2Model(cfg).eval()
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    d = os.path.join(root, name)
    os.makedirs(d, exist_ok=True)
    cfg.to_json_file(os.path.join(d, "config.json"))
    with open(os.path.join(d, "preprocessor_config.json"), "w") as f:
        json.dump({"do_normalize": True, "sampling_rate": 16000}, f)
    state = {k: v.detach().contiguous() for k, v in model.state_dict().items()}
    if name == "w2v_group":
        renamed = {}
        for k, v in state.items():
            k = k.replace("parametrizations.weight.original0", "weight_g")
            k = k.replace("parametrizations.weight.original1", "weight_v")
            renamed["wav2vec2." + k] = v
        state = renamed
    save_file(state, os.path.join(d, "model.safetensors"))
    lines = []
    for i, w in enumerate(waves):
        x = (w - w.mean()) / np.sqrt(w.var() + 1e-7)
        with torch.no_grad():
            h = model(torch.tensor(x, dtype=torch.float32)[None]).last_hidden_state[0]
        np.savetxt(os.path.join(d, "wave%d.txt" % i), w)
        pooled = h.mean(dim=0).numpy().astype(np.float64)
        lines.append("wave%d %d %s" % (i, h.shape[0], " ".join("%.9g" % v for v in pooled)))
    with open(os.path.join(d, "expected.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    print(name, [k for k in state.keys() if "pos_conv" in k])
