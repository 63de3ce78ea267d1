"""测试包"""