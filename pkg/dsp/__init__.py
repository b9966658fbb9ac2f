"""Diffusion stabilizer policy toolkit: train on clean demos, then filter perturbed ones."""
