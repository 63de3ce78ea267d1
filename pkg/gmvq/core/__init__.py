"""数值核心包：自动微分、码本、后验、采样与损失"""
