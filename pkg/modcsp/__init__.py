"""
modcsp: 多类别结构上模 p 计数 CSP 的工具库

主要入口：
- homcount: 同态计数、Möbius 反演、矩阵配分函数
- autos / polyclone: 自同构、多态与自同构多项式
- mpp / obstruction: p-mpp 闭包、Mal'tsev 判定与障碍证书
- reduce / classify: 定义域缩小与复杂性分类
"""

__version__ = "0.3.0"
