from planrl.nn.tensor import (Tape, Tensor, as_tensor, backward, constant,
                              gaussian_log_prob_np, gaussian_log_prob_t)
from planrl.nn.mlp import Mlp
from planrl.nn.optim import Adam, AdamState, adam_step, clip_grads, global_grad_norm
from planrl.nn.gradcheck import fd_gradient_check, compare, run_suite
from planrl.nn.checkpoint import load_bundle, save_bundle
