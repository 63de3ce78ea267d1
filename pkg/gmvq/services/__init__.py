"""服务层包"""
