"""Fine-tune the toy transformer encoder and extract tokens.

Shows the two extraction points: the class token (position 0) and the
image tokens (everything after it), plus the identities connecting the
three extraction modes and their pooled versions.
"""

import numpy as np

import cellsift as cs

print("1) toy images: three solid-intensity classes, 28x28")
images, labels = cs.toy_image_dataset((30, 30, 30), image_size=28, seed=0)

print("2) fine-tune the toy encoder (2 blocks, 4 heads, E=32)")
state = cs.init_encoder(cs.EncoderConfig(), seed=0)
report = cs.fine_tune(state, images, labels, epochs=10, learning_rate=1e-3, seed=0)
print(f"   loss: {report.history[0]:.4f} -> {report.history[-1]:.4f}, "
      f"best epoch {report.best_epoch}")
print(f"   learning rates seen: {sorted(set(report.lr_history), reverse=True)}")

print("3) extract tokens in all three modes")
all_t = cs.extract_tokens(report.state, images, cs.ExtractionMode.ALL_TOKENS)
cls_t = cs.extract_tokens(report.state, images, cs.ExtractionMode.CLASS_TOKEN)
img_t = cs.extract_tokens(report.state, images, cs.ExtractionMode.IMAGE_TOKENS)
print(f"   class {cls_t.data.shape}, image {img_t.data.shape}, all {all_t.data.shape}")
print(f"   all[:, 0, :] == class tokens: "
      f"{np.array_equal(all_t.data[:, :1, :], cls_t.data)}")
print(f"   all[:, 1:, :] == image tokens: "
      f"{np.array_equal(all_t.data[:, 1:, :], img_t.data)}")

print("4) pooling collapses (N, L, E) -> (N, E)")
p_all = cs.pool_tokens(all_t).data
p_cls = cs.pool_tokens(cls_t).data
p_img = cs.pool_tokens(img_t).data
p = img_t.data.shape[1]
combo = (1 * p_cls + p * p_img) / (p + 1)
print(f"   all-tokens pooling == (1*class + {p}*image)/{p + 1}: "
      f"max err {np.abs(p_all - combo).max():.2e}")

print("5) the pooled features separate the classes")
data = cs.Dataset(cs.PooledFeatures(p_all), labels)
model = cs.train_logreg(data, max_iter=500)
accuracy = (model.predict(p_all) == labels.labels).mean()
print(f"   logistic probe accuracy on pooled all-tokens: {accuracy:.3f}")
